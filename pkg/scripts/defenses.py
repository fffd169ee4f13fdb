"""Backdoor success and inference distance under each defense on one setting.

    python scripts/defenses.py --preset setting2 --seeds 5 --out results/defenses.csv
"""

import argparse
import csv
import sys

import numpy as np

from popalign.config import PRESETS, load_config
from popalign.experiment import run_experiment
from popalign.metrics import success_window_stats


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--preset", choices=PRESETS, default="setting2")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--inject", type=int, default=10)
    ap.add_argument("--epsilon", type=float, default=50.0)
    ap.add_argument("--out", default="results/defenses.csv")
    args = ap.parse_args(argv)

    rows = []
    for kind in ("none", "foolsgold", "local_dp"):
        for seed in range(args.seeds):
            cfg, errs = load_config(preset=args.preset, overrides={
                "seed": seed, "rounds": args.rounds,
                "defense": {"kind": kind, "dp_epsilon": args.epsilon},
                "attack": {"aligned_fraction": 0.2, "inference_rounds": [1], "injection_round": args.inject},
            })
            if errs:
                sys.exit("\n".join(errs))
            res = run_experiment(cfg)
            bd, _ = success_window_stats(res.series["backdoor_success"], args.inject)
            rows.append((kind, seed, bd, res.series["main_accuracy"].values[-1], res.series["inferred_to_true"].values[0]))

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["defense", "seed", "backdoor_window_mean", "final_main_accuracy", "inferred_to_true"])
        w.writerows(rows)
    print(f"{'defense':10} {'backdoor':>9} {'accuracy':>9} {'inferred':>9}")
    for kind in ("none", "foolsgold", "local_dp"):
        m = np.mean([r[2:] for r in rows if r[0] == kind], axis=0)
        print(f"{kind:10} {m[0]:9.4f} {m[1]:9.4f} {m[2]:9.4f}")


if __name__ == "__main__":
    main()
