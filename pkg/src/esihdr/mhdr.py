"""Multi-exposure branch and the full two-branch network.

:class:`HdrNet` owns one :class:`~esihdr.params.ParamStore`. Parameter names
are prefixed by component (``E1``..``E4``, ``shdr.*``, ``mhdr.*``) so the
two reconstruction networks can be audited for disjointness.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import functional as F
from . import imaging
from . import tensor as T
from .config import ABLATIONS, NetworkConfig
from .params import BatchNorm, Conv, ParamStore, Projection
from .shdr import Extractor, Reconstructor, ShdrBranch, _check_pair, _temperature
from .tensor import Tensor, no_grad


@dataclass
class FusionWeights:
    w_ref: Tensor
    w_nonref: Tensor


class MultiScaleBlock:
    """3x3, 5x5 and 7x7 convs plus a pooled branch, reduced to weight maps.

    The four ``C``-channel maps are concatenated, reduced to ``2C`` by a 3x3
    conv, batch-normalized and squashed by a sigmoid.
    """

    def __init__(self, store, name, channels):
        c = channels
        self.c3 = Conv(store, f"{name}.c3", 2 * c, c, 3)
        self.c5 = Conv(store, f"{name}.c5", 2 * c, c, 5)
        self.c7 = Conv(store, f"{name}.c7", 2 * c, c, 7)
        self.pool = Conv(store, f"{name}.pool", 2 * c, c)
        # batch norm removes any bias added here
        self.reduce = Conv(store, f"{name}.reduce", 4 * c, 2 * c, 3, bias=False)
        self.bn = BatchNorm(store, f"{name}.bn", 2 * c)

    def __call__(self, x):
        B, _, H, W = x.shape
        pooled = self.pool(F.gap(x)) * np.ones((1, 1, H, W))
        h = T.concat([self.c3(x), self.c5(x), self.c7(x), pooled], axis=1)
        return T.sigmoid(self.bn(self.reduce(h)))


class InteractionFusion:
    """Fuse the reference feature with one non-reference feature.

    Cross-concatenates raw and convolved features, predicts per-position
    weights for the two concatenations, and mixes them with a 1x1 conv.
    """

    def __init__(self, store, name, channels):
        c = channels
        self.ref1 = Conv(store, f"{name}.ref_conv1", c, c, 3)
        self.ref2 = Conv(store, f"{name}.ref_conv2", c, c, 3)
        self.non1 = Conv(store, f"{name}.non_conv1", c, c, 3)
        self.non2 = Conv(store, f"{name}.non_conv2", c, c, 3)
        self.mfeb_ref = MultiScaleBlock(store, f"{name}.mfeb_ref", c)
        self.mfeb_non = MultiScaleBlock(store, f"{name}.mfeb_non", c)
        self.out = Conv(store, f"{name}.out", 2 * c, c)

    def weights(self, f2, fi):
        fusion = T.concat([f2, fi], axis=1)
        a = T.exp(self.mfeb_ref(fusion))
        b = T.exp(self.mfeb_non(fusion))
        total = T.reciprocal(a + b)
        return FusionWeights(a * total, b * total)

    def __call__(self, f2, fi, trace=None):
        _check_pair(f2, fi, "FIFM")
        lrelu = lambda t: F.activate(t, "lrelu")  # noqa: E731
        f2_conv = lrelu(self.ref2(lrelu(self.ref1(f2))))
        fi_conv = lrelu(self.non2(lrelu(self.non1(fi))))
        cat_ref = T.concat([f2, fi_conv], axis=1)
        cat_non = T.concat([fi, f2_conv], axis=1)
        w = self.weights(f2, fi)
        if trace is not None:
            trace["weights"] = w
        return self.out(w.w_ref * cat_ref + w.w_nonref * cat_non)


class GhostSuppression:
    """Cross-attention with queries from the single-frame branch.

    Keys are the ReLU-activated and values the negative-part-activated
    projections of the fused multi-exposure feature.
    """

    def __init__(self, store, name, channels):
        c = channels
        self.q = Projection(store, f"{name}.q", c)
        self.k = Projection(store, f"{name}.k", c)
        self.v = Projection(store, f"{name}.v", c)
        self.kv = Conv(store, f"{name}.kv", 2 * c, c)
        self.log_s = _temperature(store, f"{name}.log_s")
        self.out = Conv(store, f"{name}.out", c, c)
        self.fuse = Conv(store, f"{name}.fuse", 2 * c, c)

    def __call__(self, fs, fm, trace=None):
        _check_pair(fs, fm, "GSM")
        q = self.q(fs)
        k = F.activate(self.k(fm), "relu")
        v = F.activate(self.v(fm), "rrelu_paper")
        k_mix = self.kv(T.concat([k, v], axis=1))
        n = fs.shape[-1] * fs.shape[-2]
        o, attn = F.scaled_attention(q, k_mix, v, F.temperature(self.log_s, n))
        inner = self.out(o) + fm
        if trace is not None:
            trace.update(k=k, v=v, attn=attn, inner=inner)
        return self.fuse(T.concat([inner, fs], axis=1))


class ConcatMerge:
    """Channel concat followed by a 1x1 conv; stands in for ablated modules."""

    def __init__(self, store, name, parts, channels):
        self.conv = Conv(store, f"{name}.conv", parts * channels, channels)

    def __call__(self, *feats, trace=None):
        return self.conv(T.concat(list(feats), axis=1))


def ablate(cfg, switch):
    """Return a copy of ``cfg`` with one ablation switch applied."""
    if switch not in ABLATIONS:
        raise ValueError(f"unknown ablation {switch!r}; choose from {ABLATIONS}")
    if cfg.ablation is not None and cfg.ablation != switch:
        raise ValueError(f"ablation {cfg.ablation!r} already set; switches are exclusive")
    return dataclasses.replace(cfg, ablation=switch)


class HdrNet:
    """Both branches, their extractors and reconstruction networks."""

    def __init__(self, cfg=None):
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        c, n, w = cfg.channels, cfg.dem_count, cfg.window
        ab = cfg.ablation
        self.store = store = ParamStore(cfg.seed)
        self.use_shdr = ab != "no_shdr_esi"
        self.E1 = Extractor(store, "E1", 6, c, w)
        self.E2 = Extractor(store, "E2", 6, c, w)
        self.E3 = Extractor(store, "E3", 6, c, w)
        self.E4 = Extractor(store, "E4", 3, c, w) if self.use_shdr else None
        self.shdr = (
            ShdrBranch(store, "shdr", c, n, use_srm=ab != "no_srm", use_mrm=ab != "no_mrm")
            if self.use_shdr
            else None
        )
        if ab == "no_fifm":
            self.fifm1 = self.fifm3 = None
            self.fuse = ConcatMerge(store, "mhdr.concat_in", 3, c)
        else:
            self.fifm1 = InteractionFusion(store, "mhdr.fifm1", c)
            self.fifm3 = InteractionFusion(store, "mhdr.fifm3", c)
            self.fuse = Conv(store, "mhdr.fuse", 2 * c, c)
        if not self.use_shdr:
            self.gsms = []
        elif ab == "no_gsm":
            self.gsms = [ConcatMerge(store, f"mhdr.merge{k}", 2, c) for k in range(n)]
        else:
            self.gsms = [GhostSuppression(store, f"mhdr.gsm{k}", c) for k in range(n)]
        self.recon = Reconstructor(store, "mhdr.recon", c)

    # -- modes ---------------------------------------------------------

    def train(self):
        self.store.training = True
        return self

    def eval(self):
        self.store.training = False
        return self

    # -- forward -------------------------------------------------------

    def extract(self, x1, x2, x3, esi):
        feats = {"F1": self.E1(x1), "F2": self.E2(x2), "F3": self.E3(x3)}
        if self.use_shdr:
            feats["F2m"] = self.E4(esi)
        return feats

    def shdr_forward(self, x2, esi, trace=None):
        """Single-frame branch alone: ``(H_s, DemOutputs)``."""
        if not self.use_shdr:
            raise ValueError("the single-frame branch is ablated in this configuration")
        f2 = self.E2(x2)
        out = self.shdr(f2, self.E4(esi), trace=trace)
        return out.hdr, out

    def forward_features(self, feats, trace=None):
        f1, f2, f3 = feats["F1"], feats["F2"], feats["F3"]
        shdr_out = None
        if self.use_shdr:
            sub = {} if trace is not None else None
            shdr_out = self.shdr(f2, feats["F2m"], trace=sub)
            if trace is not None:
                trace["shdr"] = sub
        if self.fifm1 is None:
            fm = self.fuse(f1, f2, f3)
        else:
            t1 = {} if trace is not None else None
            t3 = {} if trace is not None else None
            f21 = self.fifm1(f2, f1, trace=t1)
            f23 = self.fifm3(f2, f3, trace=t3)
            fm = self.fuse(T.concat([f21, f23], axis=1))
            if trace is not None:
                trace.update(fifm1=t1, fifm3=t3)
        gsm_levels = [fm]
        for k, gsm in enumerate(self.gsms):
            sub = {} if trace is not None else None
            fm = gsm(shdr_out.levels[k], fm, trace=sub)
            gsm_levels.append(fm)
            if trace is not None:
                trace[f"gsm{k}"] = sub
        if trace is not None:
            trace["gsm_levels"] = gsm_levels
            trace["dem_levels"] = shdr_out.levels if shdr_out else []
        h_m = self.recon(fm, f2)
        h_s = shdr_out.hdr if shdr_out else None
        return h_m, h_s

    def __call__(self, x1, x2, x3, esi, trace=None):
        return self.forward_features(self.extract(x1, x2, x3, esi), trace=trace)


def prepare_inputs(stacks, gamma=imaging.GAMMA, esi_c=imaging.ESI_CLAMP):
    """Batch a list of exposure stacks into ``(X1, X2, X3, ESI)`` tensors."""
    xs = [[], [], []]
    esis = []
    for stack in stacks:
        for i, im in enumerate(stack.images):
            xs[i].append(imaging.pack_input(im, gamma).data)
        e = imaging.enhancement_stop(stack.reference, esi_c).values
        esis.append(np.repeat(e[None], 3, axis=0))
    return tuple(Tensor(np.stack(x)) for x in xs) + (Tensor(np.stack(esis)),)


def mhdr_forward(stack, model, gamma=imaging.GAMMA):
    """Run the network on one stack; returns ``(H_M, H_s)`` as HdrImages."""
    with no_grad():
        h_m, h_s = model(*prepare_inputs([stack], gamma))
    to_img = lambda t: imaging.HdrImage(imaging.to_hwc(t.data[0]))  # noqa: E731
    return to_img(h_m), (to_img(h_s) if h_s is not None else None)
