"""Single-frame HDR branch guided by the enhancement-stop image.

Every block takes and returns ``[B, C, H, W]`` tensors. Blocks accept an
optional ``trace`` dict that collects intermediate values (attention
matrices, modulation pairs) for inspection without storing state on the
block itself.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import functional as F
from . import tensor as T
from .params import Conv, LayerNorm, ModulationGenerator, Projection

# init gain for the last conv of residual branches and the RGB head; keeps
# the nine-block chain and the output sigmoid out of saturation at init
RESIDUAL_GAIN = 0.1


def _check_pair(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: feature shapes differ, {a.shape} vs {b.shape}")


def _temperature(store, name):
    return store.zeros(name, (1,))


class AttentionBlock:
    """Simplified CA-ViT block.

    Layer norm, then window self-attention in parallel with a sigmoid-gated
    channel-attention branch, added back residually; then a two-layer 1x1
    feed-forward with its own residual.
    """

    def __init__(self, store, name, channels, window):
        c = channels
        self.window = window
        self.norm1 = LayerNorm(store, f"{name}.norm1", c)
        self.q = Conv(store, f"{name}.q", c, c)
        # a key bias shifts every logit of a query row equally: no effect
        self.k = Conv(store, f"{name}.k", c, c, bias=False)
        self.v = Conv(store, f"{name}.v", c, c)
        self.proj = Conv(store, f"{name}.proj", c, c)
        self.ca_down = Conv(store, f"{name}.ca_down", c, c // 2)
        self.ca_up = Conv(store, f"{name}.ca_up", c // 2, c)
        self.norm2 = LayerNorm(store, f"{name}.norm2", c)
        self.ffn_in = Conv(store, f"{name}.ffn_in", c, 2 * c)
        self.ffn_out = Conv(store, f"{name}.ffn_out", 2 * c, c)

    def __call__(self, x):
        y = self.norm1(x)
        wsa = self.proj(F.window_attention(self.q(y), self.k(y), self.v(y), self.window))
        gate = T.sigmoid(self.ca_up(T.relu(self.ca_down(F.gap(y)))))
        x = x + wsa + y * gate
        h = self.ffn_out(F.activate(self.ffn_in(self.norm2(x)), "lrelu"))
        return x + h


class Extractor:
    """3x3 conv to ``C`` channels followed by two attention blocks."""

    def __init__(self, store, name, in_channels, channels, window):
        self.window = window
        self.conv = Conv(store, f"{name}.conv", in_channels, channels, 3)
        self.blocks = [
            AttentionBlock(store, f"{name}.block{i}", channels, window) for i in range(2)
        ]

    def __call__(self, x):
        H, W = x.shape[-2:]
        w = self.window
        if H % w or W % w:
            raise ValueError(
                f"input {H}x{W} is not divisible by window {w}; "
                f"pad to {H + (-H) % w}x{W + (-W) % w}"
            )
        f = self.conv(x)
        for block in self.blocks:
            f = block(f)
        return f


class SelfRepresentation:
    """Cross-keyed attention with dynamic (gamma, beta) modulation.

    ``F2' = att(Q2, K2m, V2) + F2*gamma2 + beta2`` and symmetrically for the
    ESI stream, where the modulation pair is generated from the attention
    output.
    """

    def __init__(self, store, name, channels):
        c = channels
        self.norm_ref = LayerNorm(store, f"{name}.norm_ref", c)
        self.norm_esi = LayerNorm(store, f"{name}.norm_esi", c)
        self.q_ref = Projection(store, f"{name}.q_ref", c)
        self.k_ref = Projection(store, f"{name}.k_ref", c)
        self.v_ref = Projection(store, f"{name}.v_ref", c)
        self.q_esi = Projection(store, f"{name}.q_esi", c)
        self.k_esi = Projection(store, f"{name}.k_esi", c)
        self.v_esi = Projection(store, f"{name}.v_esi", c)
        self.log_s_ref = _temperature(store, f"{name}.log_s_ref")
        self.log_s_esi = _temperature(store, f"{name}.log_s_esi")
        self.out_ref = Conv(store, f"{name}.out_ref", c, c)
        self.out_esi = Conv(store, f"{name}.out_esi", c, c)
        self.mod_ref = ModulationGenerator(store, f"{name}.mod_ref", c)
        self.mod_esi = ModulationGenerator(store, f"{name}.mod_esi", c)

    def __call__(self, f2, f2m, trace=None):
        _check_pair(f2, f2m, "SRM")
        n = f2.shape[-1] * f2.shape[-2]
        a, b = self.norm_ref(f2), self.norm_esi(f2m)
        q2, k2, v2 = self.q_ref(a), self.k_ref(a), self.v_ref(a)
        q2m, k2m, v2m = self.q_esi(b), self.k_esi(b), self.v_esi(b)
        o2, attn2 = F.scaled_attention(q2, k2m, v2, F.temperature(self.log_s_ref, n))
        o2m, attn2m = F.scaled_attention(q2m, k2, v2m, F.temperature(self.log_s_esi, n))
        f2_att = self.out_ref(o2)
        f2m_att = self.out_esi(o2m)
        g2, b2 = self.mod_ref(f2_att)
        g2m, b2m = self.mod_esi(f2m_att)
        if trace is not None:
            trace.update(attn_ref=attn2, attn_esi=attn2m, f2_att=f2_att, f2m_att=f2m_att,
                         mod_ref=(g2, b2), mod_esi=(g2m, b2m))
        return f2_att + (f2 * g2 + b2), f2m_att + (f2m * g2m + b2m)


class MutualRepresentation:
    """Bidirectional attention exchanging detail between the two streams.

    The reference stream attends with its own queries over the ESI keys and
    the modulated ESI values, then adds its input back as a residual.
    """

    def __init__(self, store, name, channels):
        c = channels
        self.norm_ref = LayerNorm(store, f"{name}.norm_ref", c)
        self.norm_esi = LayerNorm(store, f"{name}.norm_esi", c)
        self.q_ref = Projection(store, f"{name}.q_ref", c)
        self.k_ref = Projection(store, f"{name}.k_ref", c)
        self.v_ref = Projection(store, f"{name}.v_ref", c)
        self.q_esi = Projection(store, f"{name}.q_esi", c)
        self.k_esi = Projection(store, f"{name}.k_esi", c)
        self.v_esi = Projection(store, f"{name}.v_esi", c)
        self.log_s_ref = _temperature(store, f"{name}.log_s_ref")
        self.log_s_esi = _temperature(store, f"{name}.log_s_esi")
        self.out_ref = Conv(store, f"{name}.out_ref", c, c)
        self.out_esi = Conv(store, f"{name}.out_esi", c, c)
        self.mod_ref = ModulationGenerator(store, f"{name}.mod_ref", c)
        self.mod_esi = ModulationGenerator(store, f"{name}.mod_esi", c)

    def __call__(self, f2, f2m, trace=None):
        _check_pair(f2, f2m, "MRM")
        n = f2.shape[-1] * f2.shape[-2]
        a, b = self.norm_ref(f2), self.norm_esi(f2m)
        q2, k2, v2 = self.q_ref(a), self.k_ref(a), self.v_ref(a)
        q2m, k2m, v2m = self.q_esi(b), self.k_esi(b), self.v_esi(b)
        g2, b2 = self.mod_ref(f2)
        g2m, b2m = self.mod_esi(f2m)
        o2, attn2 = F.scaled_attention(
            q2, k2m, v2m * g2 + b2, F.temperature(self.log_s_ref, n)
        )
        o2m, attn2m = F.scaled_attention(
            q2m, k2, v2 * g2m + b2m, F.temperature(self.log_s_esi, n)
        )
        if trace is not None:
            trace.update(attn_ref=attn2, attn_esi=attn2m, mod_ref=(g2, b2), mod_esi=(g2m, b2m))
        return self.out_ref(o2) + f2, self.out_esi(o2m) + f2m


class DetailEnhancement:
    """SRM and MRM outputs aggregated by ``E_r`` and fused with ``F2``."""

    def __init__(self, store, name, channels, use_srm=True, use_mrm=True):
        if not (use_srm or use_mrm):
            raise ValueError("a detail enhancement module needs SRM or MRM")
        c = channels
        self.srm = SelfRepresentation(store, f"{name}.srm", c) if use_srm else None
        self.mrm = MutualRepresentation(store, f"{name}.mrm", c) if use_mrm else None
        parts = 2 * (int(use_srm) + int(use_mrm))
        self.er1 = Conv(store, f"{name}.er1", parts * c, c, 3)
        self.er2 = Conv(store, f"{name}.er2", c, c, 3)
        self.fuse = Conv(store, f"{name}.fuse", 2 * c, c)

    def __call__(self, f_in, f2m, f2, trace=None):
        _check_pair(f_in, f2m, "DEM")
        _check_pair(f_in, f2, "DEM")
        feats = []
        if self.srm is not None:
            sub = {} if trace is not None else None
            feats += self.srm(f_in, f2m, trace=sub)
            if trace is not None:
                trace["srm"] = sub
        if self.mrm is not None:
            sub = {} if trace is not None else None
            feats += self.mrm(f_in, f2m, trace=sub)
            if trace is not None:
                trace["mrm"] = sub
        er = self.er2(F.activate(self.er1(T.concat(feats, axis=1)), "lrelu"))
        return self.fuse(T.concat([er, f2], axis=1))


class ResBlock:
    def __init__(self, store, name, channels):
        self.conv1 = Conv(store, f"{name}.conv1", channels, channels, 3)
        self.conv2 = Conv(store, f"{name}.conv2", channels, channels, 3, gain=RESIDUAL_GAIN)

    def __call__(self, x):
        return x + self.conv2(F.activate(self.conv1(x), "lrelu"))


class Reconstructor:
    """Concat with ``F2``, 1x1 conv, three R-subblocks of three res-blocks,
    3x3 conv to RGB and a sigmoid."""

    def __init__(self, store, name, channels, subblocks=3, blocks_per_sub=3):
        c = channels
        self.entry = Conv(store, f"{name}.entry", 2 * c, c)
        self.blocks = [
            ResBlock(store, f"{name}.sub{s}.res{r}", c)
            for s in range(subblocks)
            for r in range(blocks_per_sub)
        ]
        self.out = Conv(store, f"{name}.out", c, 3, 3, gain=RESIDUAL_GAIN)

    def body(self, f, f2):
        _check_pair(f, f2, "reconstruction")
        h = self.entry(T.concat([f, f2], axis=1))
        for block in self.blocks:
            h = block(h)
        return h

    def __call__(self, f, f2):
        return T.sigmoid(self.out(self.body(f, f2)))


@dataclass
class DemOutputs:
    levels: list
    hdr: object


class ShdrBranch:
    """DEM stack over ``(F2, F2m)`` and the single-frame reconstruction."""

    def __init__(self, store, name, channels, dem_count, use_srm=True, use_mrm=True):
        self.dems = [
            DetailEnhancement(store, f"{name}.dem{i}", channels, use_srm, use_mrm)
            for i in range(dem_count)
        ]
        self.recon = Reconstructor(store, f"{name}.recon", channels)

    def __call__(self, f2, f2m, trace=None):
        levels = []
        f = f2
        for i, dem in enumerate(self.dems):
            sub = {} if trace is not None else None
            f = dem(f, f2m, f2, trace=sub)
            if trace is not None:
                trace[f"dem{i}"] = sub
            levels.append(f)
        return DemOutputs(levels, self.recon(f, f2))
