"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

import math

import numpy as np

from .params import ParamStore
from .tensor import Tensor, _make, no_grad


class Probe:
    """Fixed random linear functional of one or more output tensors.

    ``probe(*outs) = sum_i <R_i, out_i - ref_i>`` where ``ref_i`` is the
    output seen on the first call. Centering and compensated summation keep
    the scalar's rounding error near one ulp of the perturbation rather than
    of the outputs, which matters for central differences of small
    gradients. The gradient is ``R_i`` regardless of the reference.

    ``weights`` fixes ``R_i`` instead of drawing them; passing an objective's
    output cotangents gives its linearization at the current point.
    """

    def __init__(self, seed=0, weights=None):
        self.rng = np.random.default_rng(seed)
        self.weights = None if weights is None else [np.asarray(w, dtype=np.float64) for w in weights]
        self.refs = None

    def __call__(self, *outs):
        outs = [o for o in outs if o is not None]
        if self.weights is None:
            self.weights = [self.rng.standard_normal(o.shape) for o in outs]
        if self.refs is None:
            self.refs = [o.data.copy() for o in outs]
        value = math.fsum(
            math.fsum((w * (o.data - r)).ravel())
            for w, o, r in zip(self.weights, outs, self.refs)
        )
        weights = self.weights

        def bw(g):
            return tuple(g * w for w in weights)

        return _make(np.array(value), tuple(outs), bw, "probe")


def _targets(params, inputs):
    if isinstance(params, ParamStore):
        named = list(params)
    else:
        named = [(f"param{i}", t) for i, t in enumerate(params or [])]
    named += [(f"input{i}", t) for i, t in enumerate(inputs or [])]
    return named


def _coordinates(targets, max_per_tensor, max_total, rng):
    if max_total is not None:
        picks = set()
        for _ in range(max_total):
            ti = int(rng.integers(len(targets)))
            picks.add((ti, int(rng.integers(targets[ti][1].data.size))))
        return sorted(picks)
    coords = []
    for ti, (_, t) in enumerate(targets):
        idx = np.arange(t.data.size)
        if max_per_tensor is not None and t.data.size > max_per_tensor:
            idx = np.sort(rng.choice(t.data.size, max_per_tensor, replace=False))
        coords += [(ti, int(i)) for i in idx]
    return coords


ABS_FLOOR = 1e-8
REL_FLOOR = 1e-6


def _central(fn, flat, i, eps):
    orig = flat[i]
    flat[i] = orig + eps
    fp = fn().item()
    flat[i] = orig - eps
    fm = fn().item()
    flat[i] = orig
    return (fp - fm) / (2.0 * eps)


def gradcheck(fn, params=None, inputs=None, eps=1e-5, max_per_tensor=None,
              max_total=None, seed=0, report=False, tol=1e-4, refinements=2):
    """Compare reverse-mode gradients of ``fn()`` with central differences.

    ``fn`` takes no arguments and returns a scalar Tensor. By default every
    element of every parameter and input tensor is perturbed. For large
    graphs, ``max_per_tensor`` caps the elements drawn from each tensor and
    ``max_total`` instead draws that many (tensor, element) pairs, choosing
    the tensor uniformly first so small tensors are not starved.

    Returns the maximum of ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = max(ABS_FLOOR, REL_FLOOR * max|grad|)``. Difference roundoff
    scales with the magnitudes flowing through the whole graph, so elements
    that are tiny or structurally zero next to the largest gradient are
    judged against that scale rather than against themselves. With
    ``report=True`` returns ``(max_error, worst_coordinate_name)``.

    A coordinate whose error reaches ``tol`` is retried with the step cut
    tenfold, up to ``refinements`` times, keeping the smallest error. A
    ReLU-type kink inside the difference interval disappears as the step
    shrinks; a wrong gradient stays wrong at every step.
    """
    targets = _targets(params, inputs)
    for _, t in targets:
        # perturbations go through a flat view, which needs contiguous storage
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    out = fn()
    if not isinstance(out, Tensor) or out.data.size != 1:
        shape = getattr(out, "shape", None)
        raise ValueError(f"gradcheck needs a scalar output, got shape {shape}")
    out.backward()
    gmax = max((float(np.abs(t.grad).max()) for _, t in targets if t.grad is not None), default=0.0)
    floor = max(ABS_FLOOR, REL_FLOOR * gmax)

    rng = np.random.default_rng(seed)
    worst, worst_name = 0.0, None
    with no_grad():
        for ti, i in _coordinates(targets, max_per_tensor, max_total, rng):
            name, t = targets[ti]
            flat = t.data.reshape(-1)
            a = t.grad.reshape(-1)[i] if t.grad is not None else 0.0
            err, step = np.inf, eps
            for _ in range(refinements + 1):
                num = _central(fn, flat, i, step)
                err = min(err, abs(a - num) / max(abs(a), abs(num), floor))
                if err < tol:
                    break
                step /= 10.0
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    if report:
        return worst, worst_name
    return worst
