#!/usr/bin/env python3
"""Kronecker-preconditioned training of the (1+1)d heat equation.

Uses the manufactured solution exp(-pi^2 t / 4) sin(pi x) with diffusivity
1/4, merged initial/boundary conditions, and a fixed training batch.
"""

import argparse
import os

from pinnopt.harness import RunConfig, run_training


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/heat1d", help="output directory")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--optimizer", default="kfac", choices=["kfac", "kfac_star"])
    args = parser.parse_args()

    cfg = RunConfig.from_dict(
        dict(
            problem="heat",
            problem_params={"spatial_dim": 1},
            widths=[2, 64, 1],
            optimizer=args.optimizer,
            damping=1e-5,
            ema=0.9,
            momentum=0.9,
            n_interior=900,
            n_boundary=120,
            resample_every=0,
            max_steps=args.steps,
            eval_every=max(args.steps // 20, 1),
            n_eval_points=2000,
            seed=args.seed,
            output_dir=os.path.join(args.out, args.optimizer),
        )
    )
    log = run_training(cfg)
    first, last = log.rows[0], log.final
    print(
        f"{args.optimizer}: l2 {first[5]:.3e} -> {last[5]:.3e} "
        f"({first[5] / last[5]:.0f}x) in {int(last[0])} steps"
    )


if __name__ == "__main__":
    main()
