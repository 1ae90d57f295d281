"""Nearest-prototype softmax classifier used in place of an adapting network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .memory import MemoryEntry, MemoryState, ConfigError, annotate


@dataclass
class ProxyModel:
    prototypes: np.ndarray
    temperature: float = 1.0
    learning_rate: float = 0.1
    source: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.prototypes = np.array(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise ConfigError("prototypes must be a (C, d) array with C >= 2")
        if not np.all(np.isfinite(self.prototypes)):
            raise ConfigError("prototypes must be finite")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0 <= self.learning_rate <= 1:
            raise ConfigError(f"learning_rate must lie in [0, 1], got {self.learning_rate}")
        if self.source is None:
            self.source = self.prototypes.copy()

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def reset(self) -> None:
        self.prototypes = self.source.copy()

    def logits(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected feature dim {self.dim}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        diff = x[..., None, :] - self.prototypes
        return -np.einsum("...cd,...cd->...c", diff, diff) / self.temperature

    def predict(self, features) -> np.ndarray:
        """Class probabilities for one vector ``(d,)`` or a batch ``(B, d)``."""
        z = self.logits(features)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def adapt_from_memory(self, state: MemoryState) -> "ProxyModel":
        eta = self.learning_rate
        for c, part in enumerate(state.partitions):
            if not part:
                continue
            mean = np.mean([e.features for e in part], axis=0, dtype=np.float64)
            self.prototypes[c] = (1.0 - eta) * self.prototypes[c] + eta * mean
        return self

    def reencode(self, entries: Iterable[MemoryEntry], representation: str = "probability") -> list[MemoryEntry]:
        """Re-annotate entries in place with the current model; ages are kept."""
        entries = list(entries)
        if not entries:
            return entries
        probs = self.predict(np.stack([e.features for e in entries]))
        for e, p in zip(entries, probs):
            fresh = annotate(e.features, p, e.sample_id, group_id=e.group_id,
                             representation=representation)
            e.pseudo_label = fresh.pseudo_label
            e.uncertainty = fresh.uncertainty
            e.representation = fresh.representation
        return entries
