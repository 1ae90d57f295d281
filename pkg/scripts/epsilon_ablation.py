"""FPS diversity threshold ablation on the ``duplicates`` and ``skewed`` presets.

For each epsilon the script reports accuracy, redundancy at that epsilon and
duplicate occupancy, averaged over seeds.

    python3 scripts/epsilon_ablation.py --seeds 5
"""

import argparse

import numpy as np

from ttamem.harness import execute
from ttamem.policies import PolicyConfig, PolicyKind
from ttamem.presets import duplicates_config, skewed_config

EPSILONS = [0.001, 0.005, 0.01, 0.05]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    for name, preset in (("duplicates", duplicates_config), ("skewed", skewed_config)):
        print(f"[{name}]  {'eps':>6s} {'accuracy':>9s} {'redundancy':>11s} {'dup-occ':>8s}")
        for eps in EPSILONS:
            runs = [execute(preset(seed=s).replace(policy=PolicyConfig(PolicyKind.FPS, epsilon=eps)))
                    for s in range(args.seeds)]
            acc = np.mean([r.accuracy for r in runs])
            red = np.mean([r.records[-1].redundancy_rate for r in runs])
            dup = np.mean([r.records[-1].duplicate_occupancy for r in runs])
            print(f"{'':8s}{eps:6.3f} {acc:9.4f} {red:11.4f} {dup:8.4f}")
