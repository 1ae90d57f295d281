"""Experiment loop, sweeps, and the duplicated-stream diagnostic."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from . import __version__
from .config import (DATA_STREAM, DUPLICATION_STREAM, MIXTURE_STREAM, POLICY_STREAM,
                     RNG_ALGORITHM, RunConfig, make_rng, mix_seed)
from .ingest import read_stream
from .memory import ConfigError, MemoryState, annotate, new_memory
from .metrics import STANDIN_NOTE, MetricsRecord, MetricsTracker, prequential_accuracy
from .policies import PolicyKind, process_batch
from .proxy import ProxyModel
from .stream import StreamBatch, StreamSimulator, duplicate_stream, make_mixture

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    """A run failed after it started; partial outputs may exist."""


@dataclass
class RunResult:
    config: RunConfig
    records: list[MetricsRecord]
    summary: dict[str, Any]
    state: MemoryState
    model: ProxyModel
    stream_digest: str
    error: str | None = None

    @property
    def accuracy(self) -> float:
        return self.summary["online_accuracy"]


def build_stream(cfg: RunConfig) -> tuple[Any, Iterator[StreamBatch]]:
    """Mixture spec and batch iterator for a simulated run."""
    spec = make_mixture(cfg.mixture, cfg.stream_mode, cfg.num_batches,
                        make_rng(cfg.seed, MIXTURE_STREAM))
    sim = StreamSimulator(spec, cfg.stream_mode, cfg.batch_size // cfg.duplication,
                          make_rng(cfg.seed, DATA_STREAM), gamma=cfg.gamma)
    batches: Iterable[StreamBatch] = iter(sim)
    if cfg.duplication > 1:
        batches = duplicate_stream(batches, cfg.duplication, make_rng(cfg.seed, DUPLICATION_STREAM))
    return spec, batches


def _batch_state(candidates, num_classes: int) -> MemoryState:
    """Transient buffer holding the raw batch (adaptation set without memory)."""
    st = new_memory(max(len(candidates), 1), num_classes)
    for c in candidates:
        st.observe(c)
        st.add(c)
    return st


def execute(cfg: RunConfig, batches: Iterable[StreamBatch] | None = None) -> RunResult:
    """Run one experiment in memory.

    Per batch: predict, score, memory update (with any due refresh), adapt.
    ``batches`` overrides the simulated stream (used for replays); the
    mixture is still generated from the seed to initialise the prototypes.
    """
    cfg.validate()
    spec, simulated = build_stream(cfg)
    stream = simulated if batches is None else batches
    model = ProxyModel(spec.source_means, cfg.temperature, cfg.learning_rate)
    state = new_memory(cfg.capacity, spec.num_classes, cfg.lambda_t, cfg.lambda_u,
                       representation=cfg.representation)
    policy_rng = make_rng(cfg.seed, POLICY_STREAM)
    tracker = MetricsTracker(eps=cfg.policy.epsilon, window=cfg.metrics_window,
                             space=cfg.metrics_space)
    digest = hashlib.sha256()
    records: list[MetricsRecord] = []
    segment = None
    error = None
    no_memory = cfg.policy.kind is PolicyKind.NO_MEMORY
    try:
        for batch in stream:
            if batch.features.shape[1] != spec.dim:
                raise ConfigError(f"stream dim {batch.features.shape[1]} != mixture dim {spec.dim}")
            if cfg.adaptation == "episodic" and segment is not None and batch.segment_id != segment:
                model.reset()
            segment = batch.segment_id
            digest.update(np.ascontiguousarray(batch.features).tobytes())
            digest.update(np.ascontiguousarray(batch.labels, dtype=np.int64).tobytes())

            probs = model.predict(batch.features)
            tracker.accuracy = prequential_accuracy(tracker.accuracy, probs.argmax(axis=1), batch.labels)
            cands = [annotate(x, p, int(sid), group_id=int(g), representation=cfg.representation)
                     for x, p, sid, g in zip(batch.features, probs, batch.sample_ids, batch.group_ids)]
            tracker.observe([c.features if cfg.metrics_space == "features" else c.representation
                             for c in cands])
            if no_memory:
                state.batch_counter += 1
                adapt_set = _batch_state(cands, spec.num_classes)
            else:
                process_batch(state, cands, cfg.policy, model, policy_rng)
                adapt_set = state
            model.adapt_from_memory(adapt_set)
            records.append(tracker.record(batch.t, adapt_set))
    except (ConfigError, ValueError) as exc:
        if not records and isinstance(exc, ConfigError):
            raise
        error = f"{type(exc).__name__}: {exc}"
        log.error("run aborted after %d batches: %s", len(records), error)

    summary = make_summary(cfg, records, state, digest.hexdigest(), tracker.accuracy, error)
    return RunResult(cfg, records, summary, state, model, digest.hexdigest(), error)


def _clean(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def make_summary(cfg, records, state, digest, accuracy, error) -> dict[str, Any]:
    final = asdict(records[-1]) if records else None
    return {
        "format": "ttamem-summary-v1",
        "version": __version__,
        "status": "partial" if error else "complete",
        "error": error,
        "seed": cfg.seed,
        "rng": {"algorithm": RNG_ALGORITHM, "provider": "numpy.random.Philox",
                "key": "(splitmix64(seed), substream)"},
        "config": cfg.to_dict(),
        "num_batches": len(records),
        "num_samples": accuracy.total,
        "online_accuracy": accuracy.value,
        "final": {k: _clean(v) for k, v in final.items()} if final else None,
        "refresh_count": state.refresh_count,
        "stream_trace_sha256": digest,
        "notes": [STANDIN_NOTE],
    }


# ------------------------------------------------------------------- outputs

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = MetricsRecord.columns()
    w.writerow(cols)
    for r in records:
        w.writerow([_cell(_clean(getattr(r, c))) for c in cols])
    return buf.getvalue()


def rows_csv(rows: list[dict[str, Any]], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(_clean(row.get(c))) for c in columns])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def summary_json(summary: dict[str, Any]) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def write_run(result: RunResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    metrics_path, summary_path = out / "metrics.csv", out / "summary.json"
    write_atomic(metrics_path, records_csv(result.records))
    write_atomic(summary_path, summary_json(result.summary))
    return metrics_path, summary_path


def run(cfg: RunConfig, out_dir=None) -> RunResult:
    """Execute ``cfg`` and write ``metrics.csv`` and ``summary.json``.

    A config with ``ingest_path`` set replays that feature file instead of
    simulating.
    """
    if cfg.ingest_path:
        return replay(cfg, cfg.ingest_path, out_dir)
    result = execute(cfg)
    write_run(result, out_dir or cfg.out_dir)
    if result.error:
        raise RunError(result.error)
    return result


def replay(cfg: RunConfig, features_path, out_dir=None) -> RunResult:
    """Run ``cfg`` on an ingested feature stream instead of the simulator."""
    data = read_stream(features_path)
    if data.dim != cfg.mixture.dim or data.num_classes != cfg.mixture.num_classes:
        raise ConfigError(f"stream file has d={data.dim}, C={data.num_classes}; config mixture has "
                          f"d={cfg.mixture.dim}, C={cfg.mixture.num_classes}")
    result = execute(cfg, data.batches(cfg.batch_size))
    write_run(result, out_dir or cfg.out_dir)
    if result.error:
        raise RunError(result.error)
    return result


# --------------------------------------------------------------------- sweeps

GRID_KEYS = ("policy", "capacity", "epsilon", "gamma", "seeds", "replicates")


def expand_grid(base: RunConfig, grid: dict[str, Any]) -> list[tuple[dict[str, Any], RunConfig]]:
    """Cartesian product of the grid.

    ``seeds`` lists explicit seeds; ``replicates: K`` instead derives seed
    ``mix_seed(base.seed, r)`` for replicate ``r``, shared by every grid point
    so that policies are compared on identical streams.
    """
    unknown = sorted(set(grid) - set(GRID_KEYS))
    if unknown:
        raise ConfigError(f"grid: unknown keys {unknown}")
    if "seeds" in grid and "replicates" in grid:
        raise ConfigError("grid: give either seeds or replicates, not both")
    axes = {k: grid.get(k, [None]) for k in ("policy", "capacity", "epsilon", "gamma")}
    for k, v in axes.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid: {k} must be a non-empty list")
    if "seeds" in grid:
        seeds = [(i, int(s)) for i, s in enumerate(grid["seeds"])]
    else:
        reps = int(grid.get("replicates", 1))
        seeds = [(r, mix_seed(base.seed, r)) for r in range(reps)]
    if not seeds:
        raise ConfigError("grid: no seeds")
    out = []
    for pol, cap, eps, gam, (rep, seed) in itertools.product(
            axes["policy"], axes["capacity"], axes["epsilon"], axes["gamma"], seeds):
        policy = base.policy
        changes: dict[str, Any] = {"seed": seed}
        pol_changes = {}
        if pol is not None:
            pol_changes["kind"] = PolicyKind(pol)
        if eps is not None:
            pol_changes["epsilon"] = float(eps)
        if pol_changes:
            changes["policy"] = replace(policy, **pol_changes)
        if cap is not None:
            changes["capacity"] = int(cap)
        if gam is not None:
            changes["gamma"] = float(gam)
        cfg = base.replace(**changes).validate()
        point = {"policy": cfg.policy.kind.value, "capacity": cfg.capacity,
                 "epsilon": cfg.policy.epsilon, "gamma": cfg.gamma,
                 "replicate": rep, "seed": seed}
        out.append((point, cfg))
    return out


def _sweep_one(cfg: RunConfig) -> dict[str, Any]:
    try:
        res = execute(cfg)
    except Exception as exc:  # one bad run must not sink the sweep
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    row = {"status": res.summary["status"], "error": res.error,
           "online_accuracy": res.accuracy}
    if res.records:
        row.update({k: v for k, v in asdict(res.records[-1]).items() if k not in ("t", "online_accuracy")})
    return row


SWEEP_POINT = ["policy", "capacity", "epsilon", "gamma"]
SWEEP_METRICS = ["online_accuracy", "label_entropy_norm", "redundancy_rate",
                 "duplicate_occupancy", "coverage", "buffer_size"]


def sweep(base: RunConfig, grid: dict[str, Any], jobs: int = 1, out_dir=None):
    """Run every grid point; returns ``(per-run rows, aggregated rows)``."""
    plan = expand_grid(base, grid)
    cfgs = [c for _, c in plan]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, cfgs))
    else:
        results = [_sweep_one(c) for c in cfgs]
    rows = [{**point, **res} for (point, _), res in zip(plan, results)]
    agg = aggregate(rows)
    if out_dir is not None:
        out = Path(out_dir)
        run_cols = SWEEP_POINT + ["replicate", "seed", "status", "error"] + \
            [c for c in MetricsRecord.columns() if c not in ("t",)]
        write_atomic(out / "sweep_runs.csv", rows_csv(rows, run_cols))
        agg_cols = SWEEP_POINT + ["n_ok", "n_failed"] + \
            [f"{m}_{s}" for m in SWEEP_METRICS for s in ("mean", "std")]
        write_atomic(out / "sweep_summary.csv", rows_csv(agg, agg_cols))
    return rows, agg


def aggregate(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    groups: dict[tuple, list[dict[str, Any]]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in SWEEP_POINT), []).append(r)
    out = []
    for key, members in groups.items():
        ok = [m for m in members if m["status"] == "complete"]
        row = dict(zip(SWEEP_POINT, key))
        row["n_ok"], row["n_failed"] = len(ok), len(members) - len(ok)
        for m in SWEEP_METRICS:
            vals = [r[m] for r in ok if r.get(m) is not None]
            row[f"{m}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{m}_std"] = float(np.std(vals)) if vals else None
        out.append(row)
    return out


# ------------------------------------------------------------ diagnostics

DIAG_METRICS = ["label_entropy_norm", "redundancy_rate", "duplicate_occupancy",
                "mean_intra_class_distance", "min_intra_class_distance", "coverage",
                "online_accuracy"]


def diag_duplicates(seeds: int = 5, out_dir=None, base: RunConfig | None = None):
    """Duplicated-stream diagnostic over all eight policies.

    Returns ``(per-seed rows, table rows, projection rows)``; the table has
    one row per policy and metric.
    """
    from .presets import duplicates_config

    base = base or duplicates_config()
    per_seed, projection = [], []
    for s in range(seeds):
        for kind in PolicyKind:
            cfg = base.replace(seed=s, policy=replace(base.policy, kind=kind))
            res = execute(cfg)
            rec = asdict(res.records[-1])
            per_seed.append({"policy": kind.value, "seed": s, **{m: rec[m] for m in DIAG_METRICS}})
            buf = res.state if kind is not PolicyKind.NO_MEMORY else ()
            for e in buf:
                projection.append({"seed": s, "policy": kind.value, "kind": "memory",
                                   "x0": float(e.features[0]), "x1": float(e.features[1]),
                                   "label": e.pseudo_label, "group_id": e.group_id})
        if s == 0:
            _, batches = build_stream(base.replace(seed=s))
            for b in batches:
                for x, y, g in zip(b.features, b.labels, b.group_ids):
                    projection.append({"seed": s, "policy": "", "kind": "stream",
                                       "x0": float(x[0]), "x1": float(x[1]),
                                       "label": int(y), "group_id": int(g)})
    table = []
    for kind in PolicyKind:
        mine = [r for r in per_seed if r["policy"] == kind.value]
        for m in DIAG_METRICS:
            vals = [r[m] for r in mine if r[m] is not None]
            table.append({"policy": kind.value, "metric": m, "n": len(vals),
                          "mean": float(np.mean(vals)) if vals else None,
                          "std": float(np.std(vals)) if vals else None})
    if out_dir is not None:
        out = Path(out_dir)
        write_atomic(out / "diag_per_seed.csv", rows_csv(per_seed, ["policy", "seed"] + DIAG_METRICS))
        write_atomic(out / "diag_table.csv", rows_csv(table, ["policy", "metric", "n", "mean", "std"]))
        write_atomic(out / "diag_projection.csv",
                     rows_csv(projection, ["seed", "policy", "kind", "x0", "x1", "label", "group_id"]))
    return per_seed, table, projection
