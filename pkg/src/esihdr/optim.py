"""Adam with bias correction and step-wise learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import OptimConfig


class NonFiniteGradient(FloatingPointError):
    """Raised when a gradient contains NaN or inf; no parameter is touched."""


@dataclass
class OptimState:
    cfg: OptimConfig = field(default_factory=OptimConfig)
    steps_per_epoch: int = 1
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cfg.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.cfg.lr}")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")

    @property
    def epoch(self):
        return self.step // self.steps_per_epoch

    @property
    def lr(self):
        """Learning rate for the next step."""
        decays = self.epoch // self.cfg.decay_every_epochs
        return self.cfg.lr * self.cfg.decay_factor**decays


def adam_step(params, grads, state):
    """Apply one Adam update in place.

    ``params`` maps names to Tensors (a ParamStore works); ``grads`` maps the
    same names to arrays, and missing entries count as zero gradient. The
    whole step is rejected before any update if a gradient is not finite.
    """
    items = list(params.items()) if hasattr(params, "items") else list(params)
    for name, t in items:
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != t.data.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {t.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name} at step {state.step}")

    cfg = state.cfg
    lr = state.lr
    state.step += 1
    k = state.step
    bc1 = 1.0 - cfg.beta1**k
    bc2 = 1.0 - cfg.beta2**k
    for name, t in items:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        if cfg.weight_decay:
            g = g + cfg.weight_decay * t.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return state
