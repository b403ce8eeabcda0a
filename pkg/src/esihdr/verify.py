"""Gradient verification suite: primitive ops, network blocks, both branches.

Every check scalarizes its outputs through a :class:`~esihdr.gradcheck.Probe`
and compares reverse-mode gradients with central differences. The suite
backs the ``gradcheck`` command and the acceptance tests.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import functional as F
from . import tensor as T
from .config import NetworkConfig
from .gradcheck import Probe, gradcheck
from .imaging import mu_law
from .losses import loss_total
from .metrics import ssim_tensor
from .mhdr import GhostSuppression, HdrNet, InteractionFusion
from .params import ParamStore
from .shdr import DetailEnhancement, MutualRepresentation, SelfRepresentation
from .tensor import Tensor

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    seed: int
    max_error: float
    worst: str | None
    seconds: float

    @property
    def passed(self):
        return self.max_error < TOLERANCE


def _leaf(arr):
    return Tensor(arr, requires_grad=True)


def _away_from(rng, shape, kinks, gap=0.05, lo=-1.0, hi=1.0):
    """Uniform samples nudged at least ``gap`` away from each kink."""
    x = rng.uniform(lo, hi, shape)
    for k in kinks:
        near = np.abs(x - k) < gap
        x[near] = k + np.where(x[near] >= k, gap, -gap) * 2
    return x


def primitive_cases(seed):
    """``(name, fn, inputs)`` for each primitive; ``fn`` maps inputs to outputs."""
    rng = np.random.default_rng(seed)
    shp = (2, 3, 5, 5)
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    st = F.RunningStats(3)
    idx_rows = np.array([0, 2, 2, 1])
    cases = [
        ("add", lambda a, b: a + b, [r(2, 3, 4), r(3, 4)]),
        ("mul", lambda a, b: a * b, [r(2, 3, 4), r(1, 4)]),
        ("div", lambda a, b: a / b, [r(3, 4), pos(3, 4)]),
        ("div_const", lambda a: a / 3.0, [r(3, 4)]),
        ("neg", lambda a: -a, [r(3, 4)]),
        ("reciprocal", T.reciprocal, [pos(3, 4)]),
        ("power", lambda a: a**3 + a**0.5, [pos(3, 4)]),
        ("exp", T.exp, [r(3, 4)]),
        ("log", T.log, [pos(3, 4)]),
        ("sqrt", T.sqrt, [pos(3, 4)]),
        ("absolute", T.absolute, [_away_from(rng, (3, 4), [0.0])]),
        ("clip", lambda a: T.clip(a, -0.5, 0.5), [_away_from(rng, (3, 4), [-0.5, 0.5])]),
        ("relu", T.relu, [_away_from(rng, (3, 4), [0.0])]),
        ("leaky_relu", lambda a: F.activate(a, "lrelu"), [_away_from(rng, (3, 4), [0.0])]),
        ("rrelu_paper", lambda a: F.activate(a, "rrelu_paper"), [_away_from(rng, (3, 4), [0.0])]),
        ("sigmoid", T.sigmoid, [r(3, 4) * 3]),
        ("sum", lambda a: T.tsum(a, axis=1, keepdims=True) + T.tsum(a), [r(3, 4)]),
        ("mean", lambda a: T.mean(a, axis=(0, 2)), [r(3, 4, 2)]),
        ("reshape", lambda a: T.reshape(a, (4, 3)) * np.arange(12).reshape(4, 3), [r(3, 4)]),
        ("transpose", lambda a: T.transpose(a, (2, 0, 1)), [r(2, 3, 4)]),
        ("getitem_basic", lambda a: a[:, 1:3], [r(3, 4)]),
        ("getitem_advanced", lambda a: a[idx_rows], [r(3, 4)]),
        ("take", lambda a: T.take(a, np.array([1, 0, 1, 2, 1]), axis=1), [r(2, 3)]),
        ("concat", lambda a, b: T.concat([a, b], axis=1), [r(2, 3), r(2, 2)]),
        ("matmul", lambda a, b: a @ b, [r(2, 3, 4), r(2, 4, 5)]),
        ("softmax", lambda a: T.softmax(a, axis=-1), [r(3, 5)]),
        ("conv2d", lambda x, w, b: F.conv2d(x, w, b), [r(*shp), r(4, 3, 3, 3), r(4)]),
        ("conv2d_1x1", lambda x, w: F.conv2d(x, w), [r(*shp), r(4, 3, 1, 1)]),
        ("conv2d_valid", lambda x, w: F.conv2d(x, w, padding=0), [r(*shp), r(2, 3, 3, 3)]),
        ("conv2d_depthwise", lambda x, w: F.conv2d(x, w, depthwise=True), [r(*shp), r(3, 1, 5, 5)]),
        ("gap", F.gap, [r(*shp)]),
        ("layer_norm", F.layer_norm, [r(*shp), r(3), r(3)]),
        ("batch_norm", lambda x, g, b: F.batch_norm(x, g, b, st), [r(*shp), r(3), r(3)]),
        ("scaled_attention",
         lambda q, k, v, s: F.scaled_attention(q, k, v, F.temperature(s, 25))[0],
         [r(*shp), r(*shp), r(*shp), r(1) * 0.1]),
        ("window_attention", lambda q, k, v: F.window_attention(q, k, v, 4),
         [r(1, 3, 8, 8), r(1, 3, 8, 8), r(1, 3, 8, 8)]),
        ("sobel", F.sobel, [r(*shp)]),
        ("mu_law", mu_law, [rng.uniform(0.05, 0.95, (3, 4))]),
        ("ssim", lambda a, b: ssim_tensor(a, b),
         [rng.uniform(0, 1, (1, 1, 12, 12)), rng.uniform(0, 1, (1, 1, 12, 12))]),
    ]
    return [(name, fn, [_leaf(a) for a in arrs]) for name, fn, arrs in cases]


def _run(name, seed, fn, params=None, inputs=None, **kw):
    probe = Probe(seed)

    def scalar():
        out = fn()
        outs = out if isinstance(out, tuple) else (out,)
        return probe(*outs)

    start = time.perf_counter()
    err, worst = gradcheck(scalar, params=params, inputs=inputs, seed=seed, report=True, **kw)
    return CheckResult(name, seed, float(err), worst, time.perf_counter() - start)


def check_primitives(seed):
    results = []
    for name, fn, inputs in primitive_cases(seed):
        results.append(_run(f"op:{name}", seed, lambda fn=fn, xs=inputs: fn(*xs), inputs=inputs))
    return results


def _features(rng, channels, size, count):
    return [_leaf(rng.standard_normal((1, channels, size, size))) for _ in range(count)]


def check_modules(seed, channels=4, size=8, samples=None):
    """SRM, MRM, DEM, FIFM and GSM on their own parameter stores.

    ``samples`` limits the perturbed coordinates per module (all by default).
    """
    rng = np.random.default_rng([seed, 7])
    results = []
    builders = [
        ("SRM", lambda s: SelfRepresentation(s, "srm", channels), 2),
        ("MRM", lambda s: MutualRepresentation(s, "mrm", channels), 2),
        ("DEM", lambda s: DetailEnhancement(s, "dem", channels), 3),
        ("FIFM", lambda s: InteractionFusion(s, "fifm", channels), 2),
        ("GSM", lambda s: GhostSuppression(s, "gsm", channels), 2),
    ]
    for name, build, n_in in builders:
        store = ParamStore(seed)
        block = build(store)
        feats = _features(rng, channels, size, n_in)
        results.append(_run(f"module:{name}", seed, lambda b=block, f=feats: b(*f),
                            params=store, inputs=feats, max_total=samples))
    return results


def toy_batch(rng, size, batch=1):
    """Random network inputs shaped like packed exposures plus an ESI map."""
    xs = [rng.uniform(0.05, 0.95, (batch, 6, size, size)) for _ in range(3)]
    esi = np.repeat(rng.uniform(0.05, 0.95, (batch, 1, size, size)), 3, axis=1)
    gt = rng.uniform(0.05, 0.95, (batch, 3, size, size))
    return [Tensor(x) for x in xs] + [Tensor(esi)], Tensor(gt)


def check_branches(seed, channels=4, size=12, samples=60, ablation=None):
    """Both branch outputs and the training objective, on random toy inputs.

    ``branch:SHDR`` probes ``H_s`` against the single-frame parameters and
    ``branch:MHDR`` probes ``H_M`` against all parameters. The objective is
    verified in two parts: its gradient with respect to the branch outputs
    (every coordinate), and the parameter gradient of its linearization,
    a probe whose weights are the objective's own output cotangents.
    Only ``samples`` randomly drawn parameter coordinates are perturbed.
    """
    rng = np.random.default_rng([seed, 11])
    model = HdrNet(NetworkConfig(channels=channels, seed=seed, ablation=ablation))
    inputs, gt = toy_batch(rng, size)
    tag = f"[{ablation}]" if ablation else ""
    results = []
    if model.use_shdr:
        shdr = [t for n, t in model.store if n.split(".")[0] in ("E2", "E4", "shdr")]
        results.append(_run(f"branch:SHDR{tag}", seed,
                            lambda: model.shdr_forward(inputs[1], inputs[3])[0],
                            params=shdr, max_total=samples))
    results.append(_run(f"branch:MHDR{tag}", seed, lambda: model(*inputs)[0],
                        params=model.store, max_total=samples))

    def loss(h_m, h_s=None):
        return loss_total(h_m, h_s, gt)[0]

    results += check_objective(f"objective{tag}", seed, lambda: model(*inputs), loss,
                               model.store, samples)
    return results


def check_objective(name, seed, forward, loss, params, samples=60):
    """Gradient of ``loss(*forward())`` with respect to ``params``, in two parts.

    ``:outputs`` checks the loss against its inputs, the network outputs.
    ``:params`` checks the network's parameter gradient for the output
    cotangents of that loss, i.e. the linearized objective. Together they
    establish the full gradient by the chain rule while keeping each
    difference quotient free of the loss value's own rounding noise.
    """
    with T.no_grad():
        outs = [o for o in forward() if o is not None]
    leaves = [_leaf(o.data) for o in outs]
    start = time.perf_counter()
    err, worst = gradcheck(lambda: loss(*leaves), inputs=leaves, seed=seed,
                           max_total=4 * samples, report=True)
    first = CheckResult(f"{name}:outputs", seed, float(err), worst, time.perf_counter() - start)
    loss(*leaves).backward()
    probe = Probe(weights=[t.grad for t in leaves])

    def linearized():
        return probe(*[o for o in forward() if o is not None])

    start = time.perf_counter()
    err, worst = gradcheck(linearized, params=params, seed=seed, max_total=samples, report=True)
    second = CheckResult(f"{name}:params", seed, float(err), worst, time.perf_counter() - start)
    return [first, second]


def run_suite(seeds=range(10), channels=4, size=8, branch_size=12, module_samples=80,
              samples=60, log=None):
    """All checks for every seed; returns the list of :class:`CheckResult`."""
    results = []
    for seed in seeds:
        for res in check_primitives(seed) + check_modules(seed, channels, size, module_samples) + \
                check_branches(seed, channels, branch_size, samples):
            results.append(res)
            if log:
                status = "ok" if res.passed else "FAIL"
                log(f"{status:4s} seed={seed} {res.name:28s} max_rel_err={res.max_error:.3e}")
    return results
