"""Named learnable tensors and the thin layer objects that own them."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import functional as F
from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Ordered mapping of dotted names to learnable tensors.

    Parameters are created in construction order from one seeded generator,
    so the same seed and architecture always give the same values.
    Batch-norm running statistics live in ``buffers``.
    """

    def __init__(self, seed=0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.buffers: "OrderedDict[str, F.RunningStats]" = OrderedDict()
        self.training = True

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        return t

    def normal(self, name, shape, fan_in, gain=1.0):
        return self.add(name, gain * self.rng.standard_normal(shape) / np.sqrt(fan_in))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def running_stats(self, name, channels):
        if name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        st = F.RunningStats(channels)
        self.buffers[name] = st
        return st

    def num_params(self):
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def tensors(self, prefix=""):
        return [t for n, t in self.params.items() if n.startswith(prefix)]

    def state_dict(self):
        state = OrderedDict((n, t.data.copy()) for n, t in self.params.items())
        for n, st in self.buffers.items():
            state[n + ".running_mean"] = st.mean.copy()
            state[n + ".running_var"] = st.var.copy()
        return state

    def load_state_dict(self, state):
        """Copy values in place so layers keep their tensor references."""
        expected = set(self.state_dict())
        got = set(state)
        if expected != got:
            missing = sorted(expected - got)[:5]
            extra = sorted(got - expected)[:5]
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for n, t in self.params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {t.shape}")
            t.data[...] = arr
        for n, st in self.buffers.items():
            st.mean = np.array(state[n + ".running_mean"], dtype=np.float64)
            st.var = np.array(state[n + ".running_var"], dtype=np.float64)


class Conv:
    """``k x k`` convolution (standard or depthwise) with bias."""

    def __init__(self, store, name, cin, cout, k=1, depthwise=False, bias=True, gain=1.0):
        if k not in F.SUPPORTED_KERNELS:
            raise ValueError(f"unsupported kernel size {k}")
        self.depthwise = depthwise
        if depthwise:
            if cin != cout:
                raise ValueError("depthwise convolution keeps the channel count")
            self.weight = store.normal(f"{name}.weight", (cout, 1, k, k), k * k, gain)
        else:
            self.weight = store.normal(f"{name}.weight", (cout, cin, k, k), cin * k * k, gain)
        self.bias = store.zeros(f"{name}.bias", (cout,)) if bias else None

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, depthwise=self.depthwise)


class LayerNorm:
    def __init__(self, store, name, channels):
        self.gamma = store.ones(f"{name}.gamma", (channels,))
        self.beta = store.zeros(f"{name}.beta", (channels,))

    def __call__(self, x):
        return F.layer_norm(x, self.gamma, self.beta)


class BatchNorm:
    def __init__(self, store, name, channels):
        self.gamma = store.ones(f"{name}.gamma", (channels,))
        self.beta = store.zeros(f"{name}.beta", (channels,))
        self.state = store.running_stats(name, channels)
        self.store = store

    def __call__(self, x):
        return F.batch_norm(
            x, self.gamma, self.beta, self.state, training=self.store.training
        )


class Projection:
    """1x1 convolution followed by a 3x3 depthwise convolution."""

    def __init__(self, store, name, channels):
        self.point = Conv(store, f"{name}.pw", channels, channels, 1)
        self.depth = Conv(store, f"{name}.dw", channels, channels, 3, depthwise=True)

    def __call__(self, x):
        return self.depth(self.point(x))


class ModulationGenerator:
    """1x1 conv, ReLU, 1x1 conv producing a ``(gamma, beta)`` pair."""

    def __init__(self, store, name, channels):
        self.c = channels
        self.inner = Conv(store, f"{name}.conv1", channels, channels, 1)
        self.outer = Conv(store, f"{name}.conv2", channels, 2 * channels, 1)

    def __call__(self, x):
        h = self.outer(T.relu(self.inner(x)))
        return h[:, : self.c], h[:, self.c :]

