"""Memory entries, the partitioned fixed-capacity buffer, and the eviction score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterator

import numpy as np

PROB_ATOL = 1e-6
NEG_ATOL = 1e-9


class ConfigError(ValueError):
    """Raised for invalid experiment or memory configuration."""


@dataclass
class MemoryEntry:
    sample_id: Hashable
    features: np.ndarray
    pseudo_label: int
    uncertainty: float
    representation: np.ndarray
    age: int = 0
    group_id: Hashable = None
    # insertion sequence number, assigned by the buffer
    order: int = -1

    def __post_init__(self):
        if self.group_id is None:
            self.group_id = self.sample_id


@dataclass
class MemoryState:
    """Fixed-capacity buffer whose entries are grouped by pseudo-label.

    ``fixed_quota`` pins the per-class slot allowance; when ``None`` the quota
    is ``ceil(capacity / K)`` with ``K`` the number of distinct pseudo-labels
    observed so far.
    """

    capacity: int
    num_classes: int
    lambda_t: float = 1.0
    lambda_u: float = 1.0
    fixed_quota: int | None = None
    representation: str = "probability"
    partitions: list[list[MemoryEntry]] = field(default_factory=list)
    seen_count_per_class: np.ndarray = None
    seen_count_total: int = 0
    batch_counter: int = 0
    refresh_count: int = 0
    _next_order: int = 0

    def __post_init__(self):
        if not self.partitions:
            self.partitions = [[] for _ in range(self.num_classes)]
        if self.seen_count_per_class is None:
            self.seen_count_per_class = np.zeros(self.num_classes, dtype=np.int64)

    def __len__(self) -> int:
        return sum(len(p) for p in self.partitions)

    def __iter__(self) -> Iterator[MemoryEntry]:
        for part in self.partitions:
            yield from part

    @property
    def is_full(self) -> bool:
        return len(self) >= self.capacity

    @property
    def num_observed(self) -> int:
        return int(np.count_nonzero(self.seen_count_per_class))

    def quota(self) -> int:
        if self.fixed_quota is not None:
            return self.fixed_quota
        k = min(max(self.num_observed, 1), self.num_classes)
        return -(-self.capacity // k)

    def majority_classes(self) -> list[int]:
        sizes = [len(p) for p in self.partitions]
        top = max(sizes)
        if top == 0:
            return []
        return [c for c, s in enumerate(sizes) if s == top]

    def observe(self, entry: MemoryEntry) -> None:
        self.seen_count_total += 1
        self.seen_count_per_class[entry.pseudo_label] += 1

    def add(self, entry: MemoryEntry) -> None:
        if len(self) >= self.capacity:
            raise RuntimeError("memory is full")
        entry.age = 0
        entry.order = self._next_order
        self._next_order += 1
        self.partitions[entry.pseudo_label].append(entry)

    def remove(self, entry: MemoryEntry) -> None:
        part = self.partitions[entry.pseudo_label]
        for i, e in enumerate(part):
            if e is entry:
                del part[i]
                return
        raise KeyError(entry.sample_id)

    def replace(self, victim: MemoryEntry, entry: MemoryEntry) -> None:
        """Evict ``victim`` and insert ``entry`` as one step."""
        self.remove(victim)
        self.add(entry)

    def entries(self) -> list[MemoryEntry]:
        return list(self)

    def repartition(self) -> None:
        flat = self.entries()
        self.partitions = [[] for _ in range(self.num_classes)]
        for e in sorted(flat, key=lambda e: e.order):
            self.partitions[e.pseudo_label].append(e)
            # a re-labelled entry counts as an observation of its new class
            if self.seen_count_per_class[e.pseudo_label] == 0:
                self.seen_count_per_class[e.pseudo_label] = 1

    def audit(self) -> None:
        """Raise AssertionError if any structural invariant is broken."""
        assert len(self) <= self.capacity, f"{len(self)} entries > capacity {self.capacity}"
        for c, part in enumerate(self.partitions):
            for e in part:
                assert e.pseudo_label == c, f"entry {e.sample_id} labelled {e.pseudo_label} in partition {c}"


def new_memory(capacity: int, num_classes: int, lambda_t: float = 1.0,
               lambda_u: float = 1.0, fixed_quota: int | None = None,
               representation: str = "probability") -> MemoryState:
    if capacity < 1:
        raise ConfigError(f"capacity must be >= 1, got {capacity}")
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if lambda_t < 0 or lambda_u < 0:
        raise ConfigError("lambda_t and lambda_u must be non-negative")
    if fixed_quota is not None and fixed_quota < 1:
        raise ConfigError(f"fixed_quota must be >= 1, got {fixed_quota}")
    if representation not in ("probability", "features"):
        raise ConfigError(f"unknown representation mode {representation!r}")
    return MemoryState(capacity=capacity, num_classes=num_classes, lambda_t=lambda_t,
                       lambda_u=lambda_u, fixed_quota=fixed_quota,
                       representation=representation)


def heuristic_score(entry: MemoryEntry, state: MemoryState) -> float:
    """Age/uncertainty evictability score; larger means evict first."""
    timeliness = 1.0 / (1.0 + math.exp(-entry.age / state.capacity))
    return (state.lambda_t * timeliness
            + state.lambda_u * entry.uncertainty / math.log(state.num_classes))


def renormalize(prob) -> np.ndarray:
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("probability vector must be 1-D with at least 2 entries")
    if not np.all(np.isfinite(p)):
        raise ValueError("probability vector has non-finite entries")
    if p.min() < -NEG_ATOL:
        raise ValueError(f"negative probability component {p.min():.3g}")
    p = np.clip(p, 0.0, None)
    total = p.sum()
    if abs(total - 1.0) > PROB_ATOL:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    return p / total


def entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def annotate(sample, prob, sample_id: Hashable, *, group_id: Hashable = None,
             representation: str = "probability") -> MemoryEntry:
    """Build a fresh entry from a sample and the model's probability vector.

    Ties in the argmax go to the lowest class index.
    """
    p = renormalize(prob)
    x = np.asarray(sample)
    if representation == "probability":
        z = p
    elif representation == "features":
        z = x.astype(np.float64)
    else:
        raise ConfigError(f"unknown representation mode {representation!r}")
    return MemoryEntry(sample_id=sample_id, features=x, pseudo_label=int(np.argmax(p)),
                       uncertainty=entropy(p), representation=z, age=0, group_id=group_id)


def tick_ages(state: MemoryState) -> MemoryState:
    for e in state:
        e.age += 1
    return state
