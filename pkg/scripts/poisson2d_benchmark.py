#!/usr/bin/env python3
"""Optimizer comparison on the 2d sine-product Poisson problem.

Trains a shallow tanh net (2 -> 64 -> 1) on a fixed batch of 900 interior
and 120 boundary points with every optimizer, writing one CSV per run
under the output directory.  Mirrors the desk-scale benchmark used by the
acceptance suite but with a full 2000-step budget for every method.
"""

import argparse
import json
import os

from pinnopt.harness import RunConfig, run_training

RUNS = {
    "kfac": dict(optimizer="kfac", damping=1e-5, ema=0.9, momentum=0.9),
    "kfac_star": dict(optimizer="kfac_star", damping=1e-4, ema=0.99),
    "engd": dict(optimizer="engd", ema=0.0, damping=0.0, rcond=1e-10),
    "adam_1e-2": dict(optimizer="adam", lr=1e-2),
    "adam_1e-3": dict(optimizer="adam", lr=1e-3),
    "sgd": dict(optimizer="sgd", lr=1e-3, momentum=0.9),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/poisson2d", help="output directory root")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--only", nargs="*", help="subset of run names")
    args = parser.parse_args()

    names = args.only or list(RUNS)
    for name in names:
        overrides = RUNS[name]
        cfg = RunConfig.from_dict(
            dict(
                problem="poisson2d_sin",
                widths=[2, 64, 1],
                n_interior=900,
                n_boundary=120,
                resample_every=0,
                max_steps=args.steps,
                eval_every=max(args.steps // 20, 1),
                n_eval_points=2000,
                seed=args.seed,
                output_dir=os.path.join(args.out, name),
                **overrides,
            )
        )
        log = run_training(cfg)
        final = log.final
        print(
            f"{name:10s} final step {int(final[0]):5d}  loss {final[4]:.3e}  "
            f"l2 {final[5]:.3e}{'  DIVERGED' if log.diverged else ''}"
        )
        summary = os.path.join(args.out, name, "summary.json")
        with open(summary, "w", encoding="utf-8") as fh:
            json.dump({"name": name, "final_l2": final[5], "final_loss": final[4]}, fh)


if __name__ == "__main__":
    main()
