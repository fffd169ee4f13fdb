"""Main-task accuracy per round with and without aligned clients (paired seeds).

    python scripts/convergence.py --preset desk --seeds 10 --aligned 0.2 --out results/convergence.csv
"""

import argparse
import csv
import sys

import numpy as np

from popalign.config import PRESETS, load_config
from popalign.experiment import run_experiment


def curve(preset, seed, attack, extra):
    cfg, errs = load_config(preset=preset, overrides={"seed": seed, "attack": attack, **extra})
    if errs:
        sys.exit("\n".join(errs))
    return np.array(run_experiment(cfg).series["main_accuracy"].values)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--preset", choices=PRESETS, default="desk")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--aligned", type=float, default=0.2, help="fraction of clients training on auxiliary data")
    ap.add_argument("--clients-per-round", type=int)
    ap.add_argument("--local-steps", type=int)
    ap.add_argument("--out", default="results/convergence.csv")
    args = ap.parse_args(argv)

    training = {}
    if args.clients_per_round:
        training["clients_per_round"] = args.clients_per_round
    if args.local_steps:
        training["local_steps"] = args.local_steps
    extra = {"training": training} if training else {}
    plain, aligned = [], []
    for seed in range(args.seeds):
        plain.append(curve(args.preset, seed, {"enabled": False}, extra))
        aligned.append(curve(args.preset, seed, {"aligned_fraction": args.aligned, "inference_rounds": [1]}, extra))
    plain, aligned = np.array(plain), np.array(aligned)

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "plain_mean", "plain_std", "aligned_mean", "aligned_std"])
        for r in range(plain.shape[1]):
            w.writerow([r + 1, plain[:, r].mean(), plain[:, r].std(), aligned[:, r].mean(), aligned[:, r].std()])
    early = aligned[:, :15].mean(axis=1) - plain[:, :15].mean(axis=1)
    print(f"rounds 1-15 mean gain {early.mean():+.4f} (seeds positive: {(early > 0).sum()}/{args.seeds})")
    print(f"final accuracy plain {plain[:, -1].mean():.4f}  aligned {aligned[:, -1].mean():.4f}")


if __name__ == "__main__":
    main()
