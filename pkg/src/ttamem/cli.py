"""Command-line entry point: ``ttamem run|sweep|replay|diag-duplicates|export-stream``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .harness import (RunError, build_stream, diag_duplicates, replay, run, sweep)
from .ingest import StreamFormatError, write_stream
from .memory import ConfigError
from .presets import PRESETS

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("ttamem")


def _config(args) -> RunConfig:
    if getattr(args, "preset", None):
        cfg = PRESETS[args.preset]()
    else:
        cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg.validate()


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run(cfg, args.out)
    print(f"online_accuracy={res.accuracy:.6f} batches={len(res.records)} "
          f"out={args.out or cfg.out_dir}")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args)
    res = replay(cfg, args.features, args.out)
    print(f"online_accuracy={res.accuracy:.6f} batches={len(res.records)} "
          f"out={args.out or cfg.out_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    try:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid {args.grid}: {exc}") from None
    out = args.out or cfg.out_dir
    rows, agg = sweep(cfg, grid, jobs=args.jobs, out_dir=out)
    failed = sum(r["status"] != "complete" for r in rows)
    print(f"{len(rows)} runs ({failed} failed), {len(agg)} grid points -> {out}")
    return EXIT_OK


def cmd_diag(args) -> int:
    per_seed, table, _ = diag_duplicates(seeds=args.seeds, out_dir=args.out)
    width = max(len(r["metric"]) for r in table)
    for r in table:
        mean = "" if r["mean"] is None else f"{r['mean']:.4f}"
        std = "" if r["std"] is None else f"{r['std']:.4f}"
        print(f"{r['policy']:10s} {r['metric']:{width}s} {mean:>8s} +- {std}")
    print(f"-> {args.out}")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _config(args)
    spec, batches = build_stream(cfg)
    n = write_stream(args.out, batches, spec.dim, spec.num_classes)
    print(f"{n} rows -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttamem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, seed=True):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="RunConfig JSON file")
        src.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("run", help="single experiment")
    with_config(sp)
    sp.add_argument("--out", help="output directory (default: config out_dir)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="grid of experiments")
    with_config(sp, seed=False)
    sp.add_argument("--grid", required=True, help="grid JSON (policy/capacity/epsilon/gamma/seeds)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("diag-duplicates", help="duplicated-stream diagnostic, all policies")
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--out", default="runs/diag")
    sp.set_defaults(func=cmd_diag)

    sp = sub.add_parser("replay", help="run a config on an ingested feature stream")
    sp.add_argument("--features", required=True)
    with_config(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("export-stream", help="serialize the simulated stream of a config")
    with_config(sp)
    sp.add_argument("--out", required=True, help="destination .csv")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, StreamFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
