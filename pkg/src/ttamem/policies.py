"""Memory update rules: one insertion routine per policy plus the batch driver.

Every ``*_insert`` function mutates ``state`` in place and returns ``True``
when the candidate became resident.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .memory import ConfigError, MemoryEntry, MemoryState, heuristic_score, tick_ages

COS_EPS0 = 1e-12


class PolicyKind(str, enum.Enum):
    NO_MEMORY = "none"
    FIFO = "fifo"
    RESERVOIR = "reservoir"
    PBRS = "pbrs"
    CSTU = "cstu"
    CDS = "cds"
    FPS = "fps"
    FPSD = "fpsd"


UNINFORMED = (PolicyKind.NO_MEMORY, PolicyKind.FIFO, PolicyKind.RESERVOIR)
CLASS_GUIDED = (PolicyKind.PBRS, PolicyKind.CSTU)
DIVERSITY_AWARE = (PolicyKind.CDS, PolicyKind.FPS, PolicyKind.FPSD)


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.FPS
    epsilon: float = 0.005
    refresh_period: int = 16
    subset_size: int = 8

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PolicyKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown policy {self.kind!r}") from None
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.refresh_period < 1:
            raise ConfigError(f"refresh_period must be >= 1, got {self.refresh_period}")
        if self.subset_size < 1:
            raise ConfigError(f"subset_size must be >= 1, got {self.subset_size}")


def _reps(entries: Sequence[MemoryEntry]) -> np.ndarray:
    return np.stack([e.representation for e in entries])


def _distances(z: np.ndarray, entries: Sequence[MemoryEntry]) -> np.ndarray:
    return np.linalg.norm(_reps(entries) - z, axis=1)


def _unit(z: np.ndarray) -> np.ndarray:
    return z / (np.linalg.norm(z, axis=-1, keepdims=True) + COS_EPS0)


def _cosine_matrix(zs: np.ndarray) -> np.ndarray:
    u = _unit(zs)
    sim = u @ u.T
    # exact symmetry so that the two members of a pair tie
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, -np.inf)
    return sim


def _majority_pool(state: MemoryState) -> list[MemoryEntry]:
    return [e for c in state.majority_classes() for e in state.partitions[c]]


def _most_evictable(pool: Sequence[MemoryEntry], state: MemoryState) -> tuple[MemoryEntry, float]:
    """Highest heuristic score in ``pool``; ties keep the earliest entry."""
    best, best_h = None, -np.inf
    for e in pool:
        h = heuristic_score(e, state)
        if h > best_h:
            best, best_h = e, h
    return best, best_h


# ----------------------------------------------------------------- uninformed

def fifo_insert(state: MemoryState, candidate: MemoryEntry) -> bool:
    if state.is_full:
        oldest = min(state, key=lambda e: e.order)
        state.remove(oldest)
    state.add(candidate)
    return True


def reservoir_insert(state: MemoryState, candidate: MemoryEntry, rng: np.random.Generator) -> bool:
    """Algorithm R; ``seen_count_total`` must already count ``candidate``."""
    if not state.is_full:
        state.add(candidate)
        return True
    j = int(rng.integers(state.seen_count_total))
    if j >= state.capacity:
        return False
    state.replace(state.entries()[j], candidate)
    return True


# --------------------------------------------------------------- class-guided

def pbrs_insert(state: MemoryState, candidate: MemoryEntry, rng: np.random.Generator) -> bool:
    if not state.is_full:
        state.add(candidate)
        return True
    y = candidate.pseudo_label
    majority = state.majority_classes()
    if y in majority:
        part = state.partitions[y]
        keep_prob = state.quota() / state.seen_count_per_class[y]
        if rng.random() >= keep_prob:
            return False
        victim = part[int(rng.integers(len(part)))]
    else:
        c = majority[int(rng.integers(len(majority)))]
        part = state.partitions[c]
        victim = part[int(rng.integers(len(part)))]
    state.replace(victim, candidate)
    return True


def cstu_insert(state: MemoryState, candidate: MemoryEntry) -> bool:
    y = candidate.pseudo_label
    part = state.partitions[y]
    if not state.is_full and len(part) < state.quota():
        state.add(candidate)
        return True
    pool = part if y in state.majority_classes() else _majority_pool(state)
    victim, victim_h = _most_evictable(pool, state)
    if victim is None or victim_h < heuristic_score(candidate, state):
        return False
    state.replace(victim, candidate)
    return True


# ------------------------------------------------------------ diversity-aware

def fps_insert(state: MemoryState, candidate: MemoryEntry, config: PolicyConfig) -> bool:
    """Nearest-neighbour diversity filter with eviction.

    A partition below its quota only admits the candidate if it is farther
    than ``epsilon`` from every entry of the partition; when the buffer is
    full the slot is taken from the most evictable entry of the majority
    partitions.  A partition at quota swaps its nearest entry for the
    candidate, checking separation against the remaining entries, so the
    buffer never shrinks.
    """
    eps = config.epsilon
    part = state.partitions[candidate.pseudo_label]
    z = candidate.representation
    h_cand = heuristic_score(candidate, state)

    if len(part) < state.quota():
        if part and _distances(z, part).min() <= eps:
            return False
        if not state.is_full:
            state.add(candidate)
            return True
        victim, victim_h = _most_evictable(_majority_pool(state), state)
        if victim is None or victim_h < h_cand:
            return False
        state.replace(victim, candidate)
        return True

    d = _distances(z, part)
    r = int(np.argmin(d))
    nearest = part[r]
    if heuristic_score(nearest, state) < h_cand:
        return False
    rest = np.delete(d, r)
    if rest.size and rest.min() <= eps:
        return False
    state.replace(nearest, candidate)
    return True


def fpsd_refresh(state: MemoryState, model) -> MemoryState:
    """Re-annotate every entry with ``model`` and rebuild the partitions."""
    model.reencode(state.entries(), representation=state.representation)
    state.repartition()
    state.refresh_count += 1
    return state


def _most_redundant_in_majority(state: MemoryState) -> MemoryEntry:
    best, best_sim, best_h = None, -np.inf, -np.inf
    for c in state.majority_classes():
        part = state.partitions[c]
        if len(part) >= 2:
            row_max = _cosine_matrix(_reps(part)).max(axis=1)
            i = int(np.argmax(row_max))
            if row_max[i] > best_sim:
                best, best_sim = part[i], row_max[i]
        elif best_sim == -np.inf:
            # singleton partitions only: fall back to the score
            h = heuristic_score(part[0], state)
            if h > best_h:
                best, best_h = part[0], h
    return best


def cds_insert(state: MemoryState, candidate: MemoryEntry, config: PolicyConfig,
               rng: np.random.Generator) -> bool:
    y = candidate.pseudo_label
    part = state.partitions[y]
    under_quota = len(part) < state.quota()
    if under_quota and not state.is_full:
        state.add(candidate)
        return True

    if part:
        k = min(config.subset_size, len(part))
        subset = rng.choice(len(part), size=k, replace=False)
        sims = _unit(_reps([part[i] for i in subset])) @ _unit(candidate.representation)
        if sims.max() >= 1.0 - config.epsilon:
            return False

    if under_quota:
        state.replace(_most_redundant_in_majority(state), candidate)
        return True

    zs = np.vstack([_reps(part), candidate.representation[None, :]])
    row_max = _cosine_matrix(zs).max(axis=1)
    # argmax returns the first maximum: stored entries precede the candidate
    i_star = int(np.argmax(row_max))
    if i_star == len(part):
        return False
    state.replace(part[i_star], candidate)
    return True


# ---------------------------------------------------------------------- driver

def insert_candidate(state: MemoryState, candidate: MemoryEntry, config: PolicyConfig,
                     rng: np.random.Generator) -> bool:
    kind = config.kind
    if kind is PolicyKind.NO_MEMORY:
        return False
    if kind is PolicyKind.FIFO:
        return fifo_insert(state, candidate)
    if kind is PolicyKind.RESERVOIR:
        return reservoir_insert(state, candidate, rng)
    if kind is PolicyKind.PBRS:
        return pbrs_insert(state, candidate, rng)
    if kind is PolicyKind.CSTU:
        return cstu_insert(state, candidate)
    if kind is PolicyKind.CDS:
        return cds_insert(state, candidate, config, rng)
    if kind in (PolicyKind.FPS, PolicyKind.FPSD):
        return fps_insert(state, candidate, config)
    raise ConfigError(f"unhandled policy {kind}")


def process_batch(state: MemoryState, candidates: Sequence[MemoryEntry], config: PolicyConfig,
                  model, rng: np.random.Generator) -> MemoryState:
    """Run the memory update for one stream batch.

    Candidates are offered in order, then every resident entry ages by one
    batch.  FPSD re-encodes the buffer whenever the batch counter reaches a
    multiple of ``refresh_period``.
    """
    for cand in candidates:
        if not 0 <= cand.pseudo_label < state.num_classes:
            raise ValueError(f"pseudo-label {cand.pseudo_label} outside [0, {state.num_classes})")
        state.observe(cand)
        insert_candidate(state, cand, config, rng)
    tick_ages(state)
    state.batch_counter += 1
    if config.kind is PolicyKind.FPSD and state.batch_counter % config.refresh_period == 0:
        fpsd_refresh(state, model)
    return state
