"""Post-injection backdoor success: two-phase attack vs injection alone, per setting.

    python scripts/backdoor_table.py --seeds 10 --inject 10 --rounds 30 --out results/backdoor.csv
"""

import argparse
import csv
import sys

import numpy as np

from popalign.config import load_config
from popalign.experiment import run_experiment
from popalign.metrics import success_window_stats

SETTINGS = ("setting1", "setting2", "setting3", "setting4")


def window_mean(preset, seed, attack, rounds, inject, defense):
    cfg, errs = load_config(preset=preset, overrides={
        "seed": seed, "rounds": rounds, "defense": {"kind": defense},
        "attack": {"injection_round": inject, **attack},
    })
    if errs:
        sys.exit("\n".join(errs))
    res = run_experiment(cfg)
    return success_window_stats(res.series["backdoor_success"], inject)[0], res.series["main_accuracy"].values[-1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--inject", type=int, default=10)
    ap.add_argument("--aligned", type=float, default=0.2)
    ap.add_argument("--defense", choices=("none", "foolsgold", "local_dp"), default="none")
    ap.add_argument("--out", default="results/backdoor.csv")
    args = ap.parse_args(argv)

    two_phase = {"aligned_fraction": args.aligned, "inference_rounds": [1]}
    rows = []
    for preset in SETTINGS:
        for seed in range(args.seeds):
            for name, attack in (("baseline", {}), ("two_phase", two_phase)):
                bd, acc = window_mean(preset, seed, attack, args.rounds, args.inject, args.defense)
                rows.append((preset, seed, name, bd, acc))

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["setting", "seed", "attack", "backdoor_window_mean", "final_main_accuracy"])
        w.writerows(rows)
    print(f"{'setting':10} {'baseline':>16} {'two-phase':>16} {'wins':>6}")
    for preset in SETTINGS:
        base = np.array([r[3] for r in rows if r[0] == preset and r[2] == "baseline"])
        two = np.array([r[3] for r in rows if r[0] == preset and r[2] == "two_phase"])
        print(f"{preset:10} {100 * base.mean():7.2f}+-{100 * base.std():6.2f} "
              f"{100 * two.mean():7.2f}+-{100 * two.std():6.2f} {(two >= base).sum():3d}/{len(base)}")


if __name__ == "__main__":
    main()
