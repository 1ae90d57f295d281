"""Synthetic Gaussian-mixture test streams.

Four regimes are supported: ``iid`` (stationary, uniform labels), ``noniid``
(stationary, Dirichlet-skewed label mix per batch), ``continual`` (drifting
segments, uniform labels) and ``ptta`` (drifting segments and Dirichlet skew).
Features are emitted as float32 so that a text round-trip at 9 significant
digits is lossless.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .memory import ConfigError

MODES = ("iid", "noniid", "continual", "ptta")
SKEWED_MODES = ("noniid", "ptta")
DRIFTING_MODES = ("continual", "ptta")


class StreamExhausted(Exception):
    """The segment schedule has no batches left."""


@dataclass
class Segment:
    segment_id: int
    offset: np.ndarray
    num_batches: int


@dataclass
class MixtureSpec:
    source_means: np.ndarray
    target_means: np.ndarray
    scale: float
    schedule: list[Segment]

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"covariance scale must be > 0, got {self.scale}")
        if self.source_means.shape != self.target_means.shape:
            raise ConfigError("source and target means must have the same shape")
        for seg in self.schedule:
            if seg.num_batches < 1:
                raise ConfigError(f"segment {seg.segment_id} has no batches")

    @property
    def num_classes(self) -> int:
        return self.source_means.shape[0]

    @property
    def dim(self) -> int:
        return self.source_means.shape[1]

    @property
    def total_batches(self) -> int:
        return sum(s.num_batches for s in self.schedule)


@dataclass
class MixtureParams:
    """Generator parameters for a random ``MixtureSpec``.

    Class means are drawn with norm ``separation``; the target domain shifts
    every class by one vector of norm ``shift``; each drift segment adds
    another offset of norm ``drift``.
    """

    num_classes: int = 10
    dim: int = 16
    separation: float = 3.0
    scale: float = 1.0
    shift: float = 2.0
    drift: float = 1.0
    num_segments: int = 15


@dataclass
class StreamBatch:
    t: int
    features: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    group_ids: np.ndarray
    segment_id: int

    def __len__(self) -> int:
        return len(self.labels)


def _random_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def split_batches(total: int, parts: int) -> list[int]:
    parts = max(1, min(parts, total))
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def make_mixture(params: MixtureParams, mode: str, num_batches: int,
                 rng: np.random.Generator) -> MixtureSpec:
    if mode not in MODES:
        raise ConfigError(f"unknown stream mode {mode!r}")
    if params.num_classes < 2 or params.dim < 1:
        raise ConfigError("mixture needs num_classes >= 2 and dim >= 1")
    if num_batches < 1:
        raise ConfigError("num_batches must be >= 1")
    c, d = params.num_classes, params.dim
    source = np.stack([params.separation * _random_direction(rng, d) for _ in range(c)])
    target = source + params.shift * _random_direction(rng, d)
    if mode in DRIFTING_MODES:
        sizes = split_batches(num_batches, params.num_segments)
        schedule = [Segment(i, params.drift * _random_direction(rng, d), n)
                    for i, n in enumerate(sizes)]
    else:
        schedule = [Segment(0, np.zeros(d), num_batches)]
    return MixtureSpec(source, target, params.scale, schedule)


# ------------------------------------------------------------------ Dirichlet

def log_gamma_variates(shape: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Logs of Gamma(shape, 1) draws via Marsaglia-Tsang.

    For ``shape < 1`` the draw is boosted: sample Gamma(shape + 1) and add
    ``log(U) / shape``.  Working in log space keeps tiny shapes from
    underflowing to zero.
    """
    if not shape > 0:
        raise ConfigError(f"gamma shape must be > 0, got {shape}")
    a = shape + 1.0 if shape < 1.0 else shape
    dd = a - 1.0 / 3.0
    cc = 1.0 / math.sqrt(9.0 * dd)
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        n = todo.size
        x = rng.standard_normal(n)
        v = (1.0 + cc * x) ** 3
        u = rng.random(n)
        ok = v > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            logv = np.where(ok, np.log(np.where(ok, v, 1.0)), -np.inf)
            accept = ok & ((u < 1.0 - 0.0331 * x ** 4)
                           | (np.log(u) < 0.5 * x * x + dd * (1.0 - v + logv)))
        out[todo[accept]] = math.log(dd) + logv[accept]
        todo = todo[~accept]
    if shape < 1.0:
        # U in (0, 1]: avoid log(0)
        out += np.log1p(-rng.random(size)) / shape
    return out


def sample_dirichlet_many(gamma: float, num_classes: int, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    if not gamma > 0:
        raise ConfigError(f"Dirichlet concentration must be > 0, got {gamma}")
    logs = log_gamma_variates(gamma, n * num_classes, rng).reshape(n, num_classes)
    logs -= logs.max(axis=1, keepdims=True)
    w = np.exp(logs)
    return w / w.sum(axis=1, keepdims=True)


def sample_dirichlet(gamma: float, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """One draw from the symmetric Dirichlet with concentration ``gamma``."""
    return sample_dirichlet_many(gamma, num_classes, 1, rng)[0]


# -------------------------------------------------------------------- streams

@dataclass
class StreamSimulator:
    """Iterator over ``StreamBatch`` objects following the segment schedule."""

    spec: MixtureSpec
    mode: str
    batch_size: int
    rng: np.random.Generator
    gamma: float | None = None
    t: int = 0
    _segment: int = 0
    _in_segment: int = 0
    _next_id: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown stream mode {self.mode!r}")
        if self.mode in SKEWED_MODES and (self.gamma is None or not self.gamma > 0):
            raise ConfigError(f"mode {self.mode!r} requires gamma > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def class_means(self, segment: Segment) -> np.ndarray:
        return self.spec.target_means + segment.offset

    def next_batch(self) -> StreamBatch:
        if self._segment >= len(self.spec.schedule):
            raise StreamExhausted
        seg = self.spec.schedule[self._segment]
        c, b = self.spec.num_classes, self.batch_size
        if self.mode in SKEWED_MODES:
            props = sample_dirichlet(self.gamma, c, self.rng)
            counts = self.rng.multinomial(b, props)
            labels = self.rng.permutation(np.repeat(np.arange(c), counts))
        else:
            labels = self.rng.integers(c, size=b)
        noise = self.rng.standard_normal((b, self.spec.dim))
        feats = (self.class_means(seg)[labels] + self.spec.scale * noise).astype(np.float32)
        ids = np.arange(self._next_id, self._next_id + b, dtype=np.int64)
        self._next_id += b
        batch = StreamBatch(self.t, feats, labels.astype(np.int64), ids, ids.copy(), seg.segment_id)
        self.t += 1
        self._in_segment += 1
        if self._in_segment == seg.num_batches:
            self._segment += 1
            self._in_segment = 0
        return batch

    def __iter__(self) -> Iterator[StreamBatch]:
        while True:
            try:
                yield self.next_batch()
            except StreamExhausted:
                return


def next_batch(sim: StreamSimulator) -> StreamBatch:
    return sim.next_batch()


def duplicate_stream(batches: Iterable[StreamBatch], factor: int,
                     rng: np.random.Generator) -> Iterator[StreamBatch]:
    """Emit every sample ``factor`` times, shuffled within its source batch.

    Copies share features and ``group_ids``; each output batch is ``factor``
    times the size of its source batch, so groups never cross a segment.
    """
    if factor < 1:
        raise ConfigError(f"duplication factor must be >= 1, got {factor}")
    next_id = 0
    for batch in batches:
        n = len(batch) * factor
        perm = rng.permutation(n)
        src = np.tile(np.arange(len(batch)), factor)[perm]
        ids = np.arange(next_id, next_id + n, dtype=np.int64)
        next_id += n
        yield StreamBatch(batch.t, batch.features[src], batch.labels[src], ids,
                          batch.group_ids[src], batch.segment_id)


def stream_digest(batches: Iterable[StreamBatch], hasher=None):
    """Feed batches into a hashlib object (sha256 by default)."""
    h = hasher or hashlib.sha256()
    for b in batches:
        h.update(np.ascontiguousarray(b.features).tobytes())
        h.update(np.ascontiguousarray(b.labels, dtype=np.int64).tobytes())
    return h
