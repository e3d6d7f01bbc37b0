#!/usr/bin/env python3
"""Desk-scale replication of the moderate-table benchmark.

Runs plain, randomized, and block-wise scaling on the four-factor two-way
association table and writes averaged trace curves plus a summary. Use
--full-scale for the published 10^4-cell size (slow on one core).
"""

import argparse

from ipscale import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", type=float, default=0.3)
    ap.add_argument("--full-scale", action="store_true")
    ap.add_argument("--replications", type=int, default=20)
    ap.add_argument("--setting", type=int, default=1, choices=[1, 2])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--wall-clock", action="store_true",
                    help="report measured wall time (not reproducible)")
    ap.add_argument("--out-dir", default="bench_tables_out")
    args = ap.parse_args()

    spec = harness.ExperimentSpec(
        scenario="table-moderate",
        replications=args.replications,
        scale_factor=1.0 if args.full_scale else args.scale,
        roster=("ips", "a-ips", "b-ips"),
        seed=args.seed,
        table_setting=args.setting,
    )
    report = harness.run_experiment(spec, wall_clock=args.wall_clock)
    for path in report.write(args.out_dir):
        print(path)
    for sm in report.summaries:
        print(f"{sm.solver:8s} ok={sm.n_ok:3d} rel_grad={sm.mean_final_rel_grad:.3e} "
              f"wall={sm.mean_wall_seconds:.3f}s work={sm.mean_work_seconds:.3f}s")


if __name__ == "__main__":
    main()
