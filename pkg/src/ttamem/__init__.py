"""Memory policies for test-time adaptation and a desk-scale benchmark harness."""

__version__ = "0.1.0"

from .memory import (ConfigError, MemoryEntry, MemoryState, annotate, heuristic_score,
                     new_memory, tick_ages)
from .policies import PolicyConfig, PolicyKind, process_batch
from .proxy import ProxyModel

__all__ = [
    "ConfigError", "MemoryEntry", "MemoryState", "PolicyConfig", "PolicyKind", "ProxyModel",
    "annotate", "heuristic_score", "new_memory", "process_batch", "tick_ages",
]
