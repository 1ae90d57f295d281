"""Duplicated-stream diagnostic: all eight policies on the ``duplicates`` preset.

Writes diag_per_seed.csv, diag_table.csv and diag_projection.csv (first two
feature coordinates of stream and memory points, for external plotting).

    python3 scripts/duplicates_diag.py --seeds 5 --out runs/duplicates
"""

import argparse

from ttamem.harness import diag_duplicates

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="runs/duplicates")
    args = ap.parse_args()

    _, table, _ = diag_duplicates(seeds=args.seeds, out_dir=args.out)
    metrics = ["duplicate_occupancy", "redundancy_rate", "label_entropy_norm", "coverage"]
    print(f"{'policy':10s}" + "".join(f"{m:>22s}" for m in metrics))
    for policy in dict.fromkeys(r["policy"] for r in table):
        cells = {r["metric"]: r for r in table if r["policy"] == policy}
        row = []
        for m in metrics:
            r = cells[m]
            row.append("n/a" if r["mean"] is None else f"{r['mean']:.3f} +- {r['std']:.3f}")
        print(f"{policy:10s}" + "".join(f"{c:>22s}" for c in row))
    print(f"-> {args.out}")
