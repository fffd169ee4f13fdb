"""Inferred-to-true vs original-to-true distance per setting and inference round.

    python scripts/inference_distances.py --seeds 10 --rounds 1 5 10 --out results/inference.csv
"""

import argparse
import csv
import sys

import numpy as np

from popalign.config import load_config
from popalign.data import l2_distance, label_distribution
from popalign.experiment import run_experiment

SETTINGS = ("setting1", "setting2", "setting3", "setting4")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--rounds", type=int, nargs="+", default=[1, 5, 10])
    ap.add_argument("--defense", choices=("none", "foolsgold", "local_dp"), default="none")
    ap.add_argument("--out", default="results/inference.csv")
    args = ap.parse_args(argv)

    rows = []
    for preset in SETTINGS:
        for seed in range(args.seeds):
            cfg, errs = load_config(preset=preset, overrides={
                "seed": seed, "rounds": max(args.rounds) + 1,
                "defense": {"kind": args.defense}, "attack": {"inference_rounds": args.rounds},
            })
            if errs:
                sys.exit("\n".join(errs))
            res = run_experiment(cfg)
            p = label_distribution(res.setup.population)
            original = float(np.mean([l2_distance(label_distribution(c), p) for c in res.setup.clients]))
            for rec in res.attack.inferences:
                rows.append((preset, seed, rec.round + 1, l2_distance(rec.result.p_hat, p), original))

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["setting", "seed", "round", "inferred_to_true", "original_to_true"])
        w.writerows(rows)
    print(f"{'setting':10} {'round':>5} {'inferred':>9} {'original':>9}")
    for preset in SETTINGS:
        for r in args.rounds:
            sel = [(i, o) for s, _, rr, i, o in rows if s == preset and rr == r]
            inf, orig = np.mean(sel, axis=0)
            print(f"{preset:10} {r:5d} {inf:9.4f} {orig:9.4f}")


if __name__ == "__main__":
    main()
