"""Named experiment configurations used by the diagnostics and scripts."""

from __future__ import annotations

from .config import RunConfig
from .policies import PolicyConfig, PolicyKind
from .stream import MixtureParams


def duplicates_config(seed: int = 0, kind: PolicyKind = PolicyKind.FPS) -> RunConfig:
    """Two classes, Dirichlet skew 0.1, M=32, 128 batches of 64, every sample x4."""
    return RunConfig(
        seed=seed,
        policy=PolicyConfig(kind=kind),
        capacity=32,
        stream_mode="noniid",
        mixture=MixtureParams(num_classes=2, dim=32, separation=0.8, scale=0.5,
                              shift=0.6, drift=0.0, num_segments=1),
        gamma=0.1,
        batch_size=64,
        num_batches=128,
        duplication=4,
        out_dir="runs/duplicates",
    )


def skewed_config(seed: int = 0, kind: PolicyKind = PolicyKind.FPS, capacity: int = 32) -> RunConfig:
    """Ten classes under drifting segments and Dirichlet(0.1) label skew."""
    return RunConfig(
        seed=seed,
        policy=PolicyConfig(kind=kind),
        capacity=capacity,
        stream_mode="ptta",
        # shift comparable to the class separation: a strong corruption regime
        mixture=MixtureParams(num_classes=10, dim=8, separation=2.0, scale=0.5,
                              shift=2.0, drift=0.3, num_segments=15),
        gamma=0.1,
        batch_size=64,
        num_batches=150,
        out_dir="runs/skewed",
    )


def balance_config(seed: int = 0, kind: PolicyKind = PolicyKind.PBRS) -> RunConfig:
    """Near single-class batches (Dirichlet 0.01), ten classes, M=40, 200 batches."""
    cfg = skewed_config(seed, kind, capacity=40)
    return cfg.replace(stream_mode="noniid", gamma=0.01, num_batches=200, out_dir="runs/balance")


PRESETS = {"duplicates": duplicates_config, "skewed": skewed_config, "balance": balance_config}
