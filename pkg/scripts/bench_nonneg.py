#!/usr/bin/env python3
"""Non-negative design benchmark: row-sum scaling vs 1-D solves vs momentum.

Compares gis, iis, and q-ips on the AR(1)-derived non-negative design
(small scenario), mirroring the published protocol at a chosen scale.
"""

import argparse

from ipscale import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", type=float, default=0.3)
    ap.add_argument("--full-scale", action="store_true")
    ap.add_argument("--replications", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--roster", default="gis,iis,q-ips")
    ap.add_argument("--wall-clock", action="store_true")
    ap.add_argument("--out-dir", default="bench_nonneg_out")
    args = ap.parse_args()

    spec = harness.ExperimentSpec(
        scenario="nonneg-small",
        replications=args.replications,
        scale_factor=1.0 if args.full_scale else args.scale,
        roster=tuple(args.roster.split(",")),
        seed=args.seed,
    )
    report = harness.run_experiment(spec, wall_clock=args.wall_clock)
    for path in report.write(args.out_dir):
        print(path)
    for sm in report.summaries:
        print(f"{sm.solver:8s} ok={sm.n_ok:3d} rel_grad={sm.mean_final_rel_grad:.3e} "
              f"wall={sm.mean_wall_seconds:.3f}s work={sm.mean_work_seconds:.3f}s")


if __name__ == "__main__":
    main()
