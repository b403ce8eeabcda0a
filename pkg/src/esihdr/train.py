"""Toy training loop on synthetic scenes, with per-step records."""
from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .config import RunConfig
from .losses import loss_total
from .mhdr import HdrNet, mhdr_forward, prepare_inputs
from .optim import OptimState, adam_step
from .synth import synth_scene
from .tensor import Tensor

HELD_OUT_SEED = 10_000_019


class Divergence(FloatingPointError):
    def __init__(self, step, value):
        super().__init__(f"loss became {value} at step {step}")
        self.step = step


@dataclass
class TrainReport:
    records: list
    metrics: list
    wall_clock: float
    seed: int
    config_hash: str
    config: dict
    model: HdrNet = field(default=None, repr=False, compare=False)

    @property
    def initial_loss(self):
        return self.records[0]["loss"]["total"]

    @property
    def final_loss(self):
        return self.records[-1]["loss"]["total"]

    def summary(self):
        return {
            "steps": len(self.records),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "ratio": self.final_loss / self.initial_loss,
            "metrics": self.metrics,
            "wall_clock": self.wall_clock,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
        }

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "records.jsonl"), "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(jsonable(rec), sort_keys=True) + "\n")
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(jsonable(self.summary()), fh, indent=2, sort_keys=True)


def jsonable(obj):
    """Replace non-finite floats with strings so output stays strict JSON."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def build_pool(data, seed):
    """``data.pool`` scenes with motion amplitudes drawn in ``[0, max_motion]``."""
    rng = np.random.default_rng([seed, 1])
    scenes = []
    for i in range(data.pool):
        motion = int(rng.integers(0, data.max_motion + 1))
        scenes.append(synth_scene([seed, 2, i], data.size, motion, data.ev_step, data.gamma))
    return scenes


def held_out_scene(data):
    return synth_scene(HELD_OUT_SEED, data.size, data.max_motion, data.ev_step, data.gamma)


def _batches(n_pool, batch, rng):
    while True:
        order = rng.permutation(n_pool)
        for i in range(0, n_pool - batch + 1, batch):
            yield order[i:i + batch]


def train_toy(cfg=None, steps=None, seed=None, model=None, log=None):
    """Train on a synthetic pool and return a :class:`TrainReport`.

    ``steps`` and ``seed`` default to the values in ``cfg``. The seed drives
    parameter initialization, the scene pool and batch order, so a given
    ``(cfg, steps, seed)`` always produces the same report.
    """
    cfg = cfg or RunConfig()
    steps = cfg.steps if steps is None else steps
    seed = cfg.seed if seed is None else seed
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    run_cfg = dataclasses.replace(cfg, steps=steps, seed=seed,
                                  network=dataclasses.replace(cfg.network, seed=seed))
    data, lc = run_cfg.data, run_cfg.loss
    model = model or HdrNet(run_cfg.network)
    model.train()
    store = model.store

    pool = build_pool(data, seed)
    held = held_out_scene(data)
    state = OptimState(run_cfg.optim, steps_per_epoch=max(1, data.pool // data.batch))
    batches = _batches(len(pool), data.batch, np.random.default_rng([seed, 3]))

    records, evals = [], []
    start = time.perf_counter()
    for step in range(1, steps + 1):
        picked = [pool[i] for i in next(batches)]
        inputs = prepare_inputs([s.stack for s in picked], data.gamma, data.esi_c)
        gt = Tensor(np.stack([s.ground_truth.pixels.transpose(2, 0, 1) for s in picked]))
        store.zero_grad()
        h_m, h_s = model(*inputs)
        obj, parts = loss_total(h_m, h_s, gt, lc.lam, lc.alpha, lc.beta, lc.mu)
        if not math.isfinite(parts.total):
            raise Divergence(step, parts.total)
        obj.backward()
        lr = state.lr
        grads = {n: t.grad for n, t in store if t.grad is not None}
        adam_step(store, grads, state)
        records.append({"step": step, "lr": lr, "loss": parts.to_dict()})
        if log:
            log(f"step {step:4d}  loss {parts.total:.5f}")
        if step % run_cfg.metrics_every == 0 or step == steps:
            model.eval()
            hm, _ = mhdr_forward(held.stack, model, data.gamma)
            model.train()
            evals.append({"step": step, **metrics.evaluate(hm, held.ground_truth, lc.mu)})
    wall = time.perf_counter() - start
    return TrainReport(records, evals, wall, seed, run_cfg.hash(), run_cfg.to_dict(), model)
