"""Run configuration with JSON round-tripping and strict key checking."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

ABLATIONS = ("no_srm", "no_mrm", "no_fifm", "no_gsm", "no_shdr_esi")


@dataclass
class NetworkConfig:
    channels: int = 16
    dem_count: int = 2
    window: int = 4
    seed: int = 0
    ablation: str | None = None

    def __post_init__(self):
        if self.channels < 4 or self.channels % 2:
            raise ValueError(f"channels must be >= 4 and even, got {self.channels}")
        if self.dem_count < 1:
            raise ValueError(f"dem_count must be >= 1, got {self.dem_count}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")


@dataclass
class LossConfig:
    lam: float = 0.5
    alpha: float = 0.2
    beta: float = 0.5
    mu: float = 5000.0


@dataclass
class OptimConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_every_epochs: int = 2000
    decay_factor: float = 0.1


@dataclass
class DataConfig:
    size: int = 32
    pool: int = 64
    batch: int = 2
    max_motion: int = 4
    ev_step: float = 2.0
    gamma: float = 2.2
    esi_c: float = 1.0


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    steps: int = 200
    metrics_every: int = 25
    out_dir: str | None = None

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc):
        return _build(cls, doc, "config")

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ValueError(f"{where}: expected an object, got {type(doc).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in doc.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "network"): NetworkConfig,
    (RunConfig, "loss"): LossConfig,
    (RunConfig, "optim"): OptimConfig,
    (RunConfig, "data"): DataConfig,
}
