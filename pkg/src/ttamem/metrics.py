"""Buffer-quality and online-accuracy metrics.

The diversity metrics (redundancy, duplicate occupancy, coverage, intra-class
distances) are stand-in definitions; output artifacts label them as such.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .memory import MemoryState

STANDIN_NOTE = ("diversity metrics (redundancy_rate, duplicate_occupancy, coverage, "
                "intra-class distances) are stand-in definitions")


def _vectors(entries, space: str) -> np.ndarray:
    attr = "representation" if space == "representation" else "features"
    return np.stack([np.asarray(getattr(e, attr), dtype=np.float64) for e in entries])


def _pairwise(x: np.ndarray) -> np.ndarray:
    """Condensed Euclidean distances (upper triangle, row-major)."""
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return d[np.triu_indices(len(x), k=1)]


def label_entropy_norm(state: MemoryState) -> Optional[float]:
    counts = np.array([len(p) for p in state.partitions], dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return None
    k = min(state.num_classes, int(n))
    if k < 2:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum() / math.log(k))


def _intra_distances(state: MemoryState, space: str) -> np.ndarray:
    chunks = [_pairwise(_vectors(p, space)) for p in state.partitions if len(p) >= 2]
    return np.concatenate(chunks) if chunks else np.empty(0)


def redundancy_rate(state: MemoryState, eps: float, space: str = "representation") -> float:
    d = _intra_distances(state, space)
    return float(np.mean(d <= eps)) if d.size else 0.0


def intra_class_distances(state: MemoryState, space: str = "representation"):
    """``(mean, min)`` over same-partition pairs, or ``None`` without pairs."""
    d = _intra_distances(state, space)
    if not d.size:
        return None
    return float(d.mean()), float(d.min())


def duplicate_occupancy(state: MemoryState) -> float:
    n = len(state)
    if n == 0:
        return 0.0
    return 1.0 - len({e.group_id for e in state}) / n


def coverage(window: np.ndarray, state: MemoryState, space: str = "representation") -> Optional[float]:
    """Mean distance from each window sample to its nearest buffer entry."""
    if len(state) == 0 or len(window) == 0:
        return None
    buf = _vectors(state, space)
    w = np.asarray(window, dtype=np.float64)
    d2 = (np.einsum("ij,ij->i", w, w)[:, None] - 2.0 * w @ buf.T
          + np.einsum("ij,ij->i", buf, buf)[None, :])
    return float(np.sqrt(np.clip(d2.min(axis=1), 0.0, None)).mean())


@dataclass(frozen=True)
class Accuracy:
    correct: int = 0
    total: int = 0

    @property
    def value(self) -> float:
        return self.correct / self.total if self.total else 0.0


def prequential_accuracy(acc: Accuracy, predictions, true_labels) -> Accuracy:
    """Fold one batch of argmax predictions into the running accuracy."""
    pred = np.asarray(predictions)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValueError(f"{pred.shape[0] if pred.ndim else 0} predictions for "
                         f"{true.shape[0] if true.ndim else 0} labels")
    return Accuracy(acc.correct + int(np.sum(pred == true)), acc.total + pred.size)


@dataclass
class MetricsRecord:
    t: int
    online_accuracy: float
    label_entropy_norm: Optional[float]
    mean_intra_class_distance: Optional[float]
    min_intra_class_distance: Optional[float]
    redundancy_rate: float
    duplicate_occupancy: float
    coverage: Optional[float]
    buffer_size: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class MetricsTracker:
    """Sliding window of recent stream representations plus the accuracy fold."""

    eps: float = 0.005
    window: int = 512
    space: str = "representation"
    accuracy: Accuracy = field(default_factory=Accuracy)
    _recent: deque = field(default_factory=deque)

    def observe(self, vectors: Sequence[np.ndarray]) -> None:
        for v in vectors:
            self._recent.append(np.asarray(v, dtype=np.float64))
            if len(self._recent) > self.window:
                self._recent.popleft()

    def record(self, t: int, state: MemoryState) -> MetricsRecord:
        dists = intra_class_distances(state, self.space)
        win = np.stack(self._recent) if self._recent else np.empty((0, 0))
        return MetricsRecord(
            t=t,
            online_accuracy=self.accuracy.value,
            label_entropy_norm=label_entropy_norm(state),
            mean_intra_class_distance=dists[0] if dists else None,
            min_intra_class_distance=dists[1] if dists else None,
            redundancy_rate=redundancy_rate(state, self.eps, self.space),
            duplicate_occupancy=duplicate_occupancy(state),
            coverage=coverage(win, state, self.space),
            buffer_size=len(state),
        )
