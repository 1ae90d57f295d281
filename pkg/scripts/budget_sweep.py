"""Online accuracy versus memory budget under the ``skewed`` preset.

Runs every policy at N in {8, 16, 32, 64} over paired seeds and prints the
mean accuracy table plus the FPS minus FIFO gap per budget.

    python3 scripts/budget_sweep.py --replicates 5 --jobs 1 --out runs/budget
"""

import argparse

from ttamem.harness import sweep
from ttamem.policies import PolicyKind
from ttamem.presets import skewed_config

BUDGETS = [8, 16, 32, 64]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/budget")
    args = ap.parse_args()

    grid = {"policy": [k.value for k in PolicyKind], "capacity": BUDGETS,
            "seeds": list(range(args.replicates))}
    _, agg = sweep(skewed_config(), grid, jobs=args.jobs, out_dir=args.out)
    acc = {(r["policy"], r["capacity"]): r["online_accuracy_mean"] for r in agg}

    print(f"{'policy':10s}" + "".join(f"{'N=' + str(n):>9s}" for n in BUDGETS))
    for k in PolicyKind:
        print(f"{k.value:10s}" + "".join(f"{acc[k.value, n]:9.4f}" for n in BUDGETS))
    gaps = [acc["fps", n] - acc["fifo", n] for n in BUDGETS]
    print(f"{'fps-fifo':10s}" + "".join(f"{g:+9.4f}" for g in gaps))
    print(f"-> {args.out}")
