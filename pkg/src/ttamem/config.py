"""Run configuration, JSON (de)serialization, and seed derivation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .memory import ConfigError
from .policies import PolicyConfig, PolicyKind
from .stream import MODES, SKEWED_MODES, MixtureParams

MASK64 = (1 << 64) - 1
RNG_ALGORITHM = "philox4x64-10"

# substream identifiers for make_rng
MIXTURE_STREAM, DATA_STREAM, POLICY_STREAM, DUPLICATION_STREAM = 0, 1, 2, 3


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 output function (Steele, Lea, Flood 2014)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(master: int, index: int) -> int:
    """Derive a 64-bit child seed: ``splitmix64(splitmix64(master) ^ index)``."""
    return splitmix64(splitmix64(master & MASK64) ^ (index & MASK64))


def make_rng(seed: int, substream: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(splitmix64(seed), substream)``."""
    key = np.array([splitmix64(seed & MASK64), substream & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class RunConfig:
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    capacity: int = 32
    stream_mode: str = "ptta"
    mixture: MixtureParams = field(default_factory=MixtureParams)
    ingest_path: str | None = None
    gamma: float | None = 0.1
    batch_size: int = 64
    num_batches: int = 150
    duplication: int = 1
    adaptation: str = "continual"
    temperature: float = 1.0
    learning_rate: float = 0.1
    lambda_t: float = 1.0
    lambda_u: float = 1.0
    representation: str = "probability"
    metrics_window: int = 512
    metrics_space: str = "representation"
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        if self.stream_mode not in MODES:
            raise ConfigError(f"stream_mode must be one of {MODES}")
        if self.stream_mode in SKEWED_MODES and (self.gamma is None or not self.gamma > 0):
            raise ConfigError(f"stream_mode {self.stream_mode!r} needs gamma > 0")
        if self.batch_size < 1 or self.num_batches < 1:
            raise ConfigError("batch_size and num_batches must be >= 1")
        if self.duplication < 1 or self.batch_size % self.duplication:
            raise ConfigError("duplication must be >= 1 and divide batch_size")
        if self.adaptation not in ("episodic", "continual"):
            raise ConfigError("adaptation must be 'episodic' or 'continual'")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if not 0 <= self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in [0, 1]")
        if self.lambda_t < 0 or self.lambda_u < 0:
            raise ConfigError("lambda_t and lambda_u must be non-negative")
        if self.representation not in ("probability", "features"):
            raise ConfigError("representation must be 'probability' or 'features'")
        if self.metrics_space not in ("representation", "features"):
            raise ConfigError("metrics_space must be 'representation' or 'features'")
        if self.metrics_window < 1:
            raise ConfigError("metrics_window must be >= 1")
        m = self.mixture
        if m.num_classes < 2 or m.dim < 1 or not m.scale > 0 or m.num_segments < 1:
            raise ConfigError("mixture needs num_classes >= 2, dim >= 1, scale > 0, num_segments >= 1")
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["policy"]["kind"] = self.policy.kind.value
        return d

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _strict(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return data


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    data = dict(_strict(RunConfig, data, "config"))
    try:
        if "policy" in data:
            data["policy"] = PolicyConfig(**_strict(PolicyConfig, data["policy"], "config.policy"))
        if "mixture" in data:
            data["mixture"] = MixtureParams(**_strict(MixtureParams, data["mixture"], "config.mixture"))
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


__all__ = ["RunConfig", "PolicyKind", "config_from_dict", "load_config", "dump_config",
           "mix_seed", "make_rng", "splitmix64", "RNG_ALGORITHM"]
