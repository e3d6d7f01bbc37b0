"""Command-line front end: fit, rake, path, bench, gen.

Exit codes form a stable scripting contract: 0 success, 1 input error,
2 internal error, 3 non-convergence or infeasible targets.

All CSV outputs carry a header row and serialize numbers with 17
significant digits so round-trips are lossless.  Trace and report files
use the deterministic work clock, so identical seeds give byte-identical
files; measured wall time lives in ``summary.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import harness, model as mdl
from .design import (
    DesignError,
    TableSchema,
    build_design_for_cells,
    build_raking_design,
    read_triplet_csv,
)
from .harness import HarnessError
from .model import ModelError, ProblemInstance
from .solvers import (
    TOL_REACHED,
    FitResult,
    SolverConfig,
    SolverError,
    _VARIANTS,
    solve,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2
EXIT_NOT_CONVERGED = 3


class InputError(ValueError):
    """Malformed input file or inconsistent command-line request."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# -- input readers ------------------------------------------------------------


def _read_csv_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}:1: empty file, expected a header row")
        rows = [(lineno, rec) for lineno, rec in enumerate(reader, start=2) if rec]
    return [h.strip() for h in header], rows


def _read_counts_table(path, schema: TableSchema) -> tuple[np.ndarray, np.ndarray]:
    """Grouped counts: one column per factor (1-based level), then count."""
    header, rows = _read_csv_rows(path)
    names = [n for n, _ in schema.factors]
    try:
        fac_cols = [header.index(n) for n in names]
        cnt_col = header.index("count")
    except ValueError as exc:
        raise InputError(f"{path}:1: header must contain {names + ['count']}: {exc}") from exc
    levels = np.empty((len(rows), len(names)), dtype=np.int64)
    counts = np.empty(len(rows))
    seen = set()
    for i, (lineno, rec) in enumerate(rows):
        try:
            levels[i] = [int(rec[c]) for c in fac_cols]
            counts[i] = float(rec[cnt_col])
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: bad record: {exc}") from exc
        key = tuple(levels[i])
        if key in seen:
            raise InputError(f"{path}:{lineno}: duplicate cell {key}")
        seen.add(key)
        if counts[i] < 0:
            raise InputError(f"{path}:{lineno}: negative count")
    if len(rows) == 0:
        raise InputError(f"{path}: no data rows")
    return levels, counts


def _read_vector_csv(path, value_name: str, n_rows: int | None = None) -> np.ndarray:
    """Indexed vector CSV with header ``row,<value_name>``."""
    header, rows = _read_csv_rows(path)
    if len(header) < 2 or header[0] != "row" or header[1] != value_name:
        raise InputError(f"{path}:1: expected header 'row,{value_name}'")
    idx = np.empty(len(rows), dtype=np.int64)
    val = np.empty(len(rows))
    for i, (lineno, rec) in enumerate(rows):
        try:
            idx[i] = int(rec[0])
            val[i] = float(rec[1])
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: bad record: {exc}") from exc
    n = n_rows if n_rows is not None else (int(idx.max()) + 1 if len(idx) else 0)
    out = np.zeros(n)
    if np.any(idx < 0) or np.any(idx >= n):
        raise InputError(f"{path}: row index out of range 0..{n - 1}")
    if len(np.unique(idx)) != len(idx):
        raise InputError(f"{path}: duplicate row index")
    out[idx] = val
    if n_rows is not None and len(idx) != n_rows:
        missing = sorted(set(range(n)) - set(idx.tolist()))[:5]
        raise InputError(f"{path}: missing rows, e.g. {missing}")
    return out


def _read_table_values(path, schema: TableSchema, value_name: str) -> np.ndarray:
    """Full-table vector keyed by factor levels; absent cells get 0."""
    header, rows = _read_csv_rows(path)
    names = [n for n, _ in schema.factors]
    try:
        fac_cols = [header.index(n) for n in names]
        val_col = header.index(value_name)
    except ValueError as exc:
        raise InputError(f"{path}:1: header must contain {names + [value_name]}: {exc}") from exc
    out = np.zeros(schema.n_cells)
    for lineno, rec in rows:
        try:
            levels = [int(rec[c]) for c in fac_cols]
            v = float(rec[val_col])
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: bad record: {exc}") from exc
        try:
            out[schema.cell_index(levels)] = v
        except DesignError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    return out


def _read_margin_csv(path, schema: TableSchema) -> tuple[tuple[int, ...], dict]:
    """Margin targets: header = subset factor names + 'target'."""
    header, rows = _read_csv_rows(path)
    names = {n: k for k, (n, _) in enumerate(schema.factors)}
    subset_names = [h for h in header if h != "target"]
    if "target" not in header:
        raise InputError(f"{path}:1: header needs a 'target' column")
    if not subset_names:
        raise InputError(f"{path}:1: header needs at least one factor column")
    for h in subset_names:
        if h not in names:
            raise InputError(f"{path}:1: unknown factor {h!r}")
    subset = tuple(sorted(names[h] for h in subset_names))
    order = np.argsort([names[h] for h in subset_names])
    fac_cols = [header.index(h) for h in subset_names]
    tgt_col = header.index("target")
    targets = {}
    for lineno, rec in rows:
        try:
            combo_raw = [int(rec[c]) for c in fac_cols]
            v = float(rec[tgt_col])
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: bad record: {exc}") from exc
        combo = tuple(int(combo_raw[i]) for i in order)
        if combo in targets:
            raise InputError(f"{path}:{lineno}: duplicate margin cell {combo}")
        if v < 0:
            raise InputError(f"{path}:{lineno}: negative target")
        targets[combo] = v
    return subset, targets


# -- output writers -----------------------------------------------------------


def _write_beta_csv(path, labels, beta) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column_label", "estimate"])
        for lab, b in zip(labels, beta):
            w.writerow([lab, _fmt(b)])


def _write_mu_csv(path, mu) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "mu"])
        for i, v in enumerate(mu):
            w.writerow([i, _fmt(v)])


def _write_trace_csv(path, res: FitResult) -> None:
    have_est = res.trace.records[0].est_error is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["iteration", "time_s", "objective", "rel_gradient"]
        if have_est:
            cols.append("est_error")
        w.writerow(cols)
        for rec in res.trace.records:
            row = [rec.iteration, _fmt(rec.work_seconds), _fmt(rec.objective),
                   _fmt(rec.rel_gradient)]
            if have_est:
                row.append(_fmt(rec.est_error))
            w.writerow(row)


def _write_summary(path, res: FitResult, inst: ProblemInstance, extra: dict | None = None) -> None:
    out = {
        "schema": 1,
        "variant": res.variant,
        "termination": res.termination,
        "objective": res.trace.final().objective,
        "rel_gradient": res.trace.final().rel_gradient,
        "iterations": res.trace.final().iteration,
        "wall_seconds": res.wall_seconds,
        "work_seconds": res.trace.final().work_seconds,
        "flags": {k: (list(v) if isinstance(v, (set, tuple)) else v)
                  for k, v in res.flags.items()},
    }
    if inst.counts is not None:
        out["g_squared"] = mdl.g_squared(inst.counts, res.mu)
        out["pearson_x2"] = mdl.pearson_x2(inst.counts, res.mu)
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _exit_for(res: FitResult) -> int:
    if res.termination == TOL_REACHED:
        return EXIT_OK
    return EXIT_NOT_CONVERGED


# -- shared solver flags -------------------------------------------------------


def _add_solver_flags(sp: argparse.ArgumentParser, default_eps: float = 1e-4) -> None:
    sp.add_argument("--solver", default="ips", choices=sorted(_VARIANTS),
                    help="solver variant (default: ips)")
    sp.add_argument("--eps-tol", type=float, default=default_eps,
                    help=f"relative-gradient tolerance (default: {default_eps:g})")
    sp.add_argument("--t-max", type=float, default=600.0,
                    help="wall-clock limit in seconds (default: 600)")
    sp.add_argument("--max-iters", type=int, default=100_000,
                    help="iteration cap (default: 100000)")
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0,
                    help="penalty weight for l1-ips / ridge-q-ips (default: 0)")
    sp.add_argument("--block-sizes", default=None,
                    help="comma-separated block sizes (default: blocks of 200)")
    sp.add_argument("--w-choice", default="bohning", choices=["bohning", "spectral"],
                    help="curvature bound used by q-ips (default: bohning)")
    sp.add_argument("--seed", type=int, default=0,
                    help="RNG seed; all randomness flows from it (default: 0)")


def _config_from_args(args) -> SolverConfig:
    blocks = None
    if args.block_sizes:
        try:
            blocks = tuple(int(t) for t in args.block_sizes.split(","))
        except ValueError as exc:
            raise InputError(f"bad --block-sizes: {exc}") from exc
    return SolverConfig(
        variant=args.solver,
        eps_tol=args.eps_tol,
        t_max_secs=args.t_max,
        max_iters=args.max_iters,
        lam=args.lam,
        block_sizes=blocks,
        w_choice=args.w_choice,
        seed=args.seed,
    )


def _load_fit_inputs(args) -> tuple[ProblemInstance, list[str]]:
    if args.counts and args.schema:
        schema = TableSchema.load(args.schema)
        levels, counts = _read_counts_table(args.counts, schema)
        X, dropped = build_design_for_cells(schema, levels)
        inst = ProblemInstance.from_counts(X, counts)
        return inst, dropped
    if args.design and args.counts_vec:
        X = read_triplet_csv(args.design)
        counts = _read_vector_csv(args.counts_vec, "count", X.n_rows)
        offset = None
        if args.offset:
            offset = _read_vector_csv(args.offset, "offset", X.n_rows)
        inst = ProblemInstance.from_counts(X, counts, offset=offset)
        return inst, []
    raise InputError("need either --counts with --schema, or --design with --counts-vec")


# -- subcommands ---------------------------------------------------------------


def cmd_fit(args) -> int:
    inst, dropped = _load_fit_inputs(args)
    cfg = _config_from_args(args)
    res = solve(inst, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_beta_csv(os.path.join(args.out_dir, "beta.csv"), inst.design.column_labels, res.beta)
    _write_mu_csv(os.path.join(args.out_dir, "mu.csv"), inst.expand_mu(res.mu))
    _write_trace_csv(os.path.join(args.out_dir, "trace.csv"), res)
    _write_summary(os.path.join(args.out_dir, "summary.json"), res, inst,
                   extra={"dropped_columns": dropped} if dropped else None)
    return _exit_for(res)


def cmd_rake(args) -> int:
    schema = TableSchema.load(args.schema)
    seed_table = _read_table_values(args.seed_table, schema, "value")
    if not args.margin:
        raise InputError("need at least one --margin file")
    margins = [_read_margin_csv(m, schema) for m in args.margin]
    subsets = [sub for sub, _ in margins]
    X = build_raking_design(schema, subsets)
    names = [n for n, _ in schema.factors]
    sizes = [m for _, m in schema.factors]

    # Assemble target statistics in design-column order; the intercept target
    # is the first margin's total (the fitted table mass must match it).
    import itertools as it

    s = np.empty(X.n_cols)
    s[0] = sum(margins[0][1].values())
    col = 1
    for subset, targets in margins:
        for combo in it.product(*[range(1, sizes[k] + 1) for k in subset]):
            if combo not in targets:
                raise InputError(
                    f"margin over {tuple(names[k] for k in subset)} is missing cell {combo}")
            s[col] = targets[combo]
            col += 1
    try:
        inst = ProblemInstance.from_suff_stats(X, s, offset=seed_table)
    except DesignError as exc:
        # a margin cell wiped out by the seed's zero structure can never match
        print(f"rake: infeasible zero structure: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    cfg = _config_from_args(args)
    res = solve(inst, cfg)

    os.makedirs(args.out_dir, exist_ok=True)
    adjusted = inst.expand_mu(res.mu)
    with open(os.path.join(args.out_dir, "adjusted.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["value"])
        for i in range(schema.n_cells):
            w.writerow(list(schema.cell_levels(i)) + [_fmt(adjusted[i])])

    worst = 0.0
    worst_label = ""
    with open(os.path.join(args.out_dir, "residuals.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column_label", "target", "fitted", "rel_residual"])
        for j in range(1, X.n_cols):
            fitted = inst.design.col_dot(j, res.mu)
            target = s[j]
            if target > 0:
                rel = abs(fitted - target) / target
            else:
                rel = 0.0 if fitted == 0.0 else np.inf
            if rel > worst:
                worst, worst_label = rel, X.column_labels[j]
            w.writerow([X.column_labels[j], _fmt(target), _fmt(fitted), _fmt(rel)])
    matched = bool(worst <= 1e-8)
    _write_summary(os.path.join(args.out_dir, "summary.json"), res, inst,
                   extra={"margins_matched": matched, "worst_rel_residual": worst,
                          "worst_margin": worst_label})
    if not matched:
        print(f"rake: margins not matched; worst relative residual {worst:.3e} "
              f"at {worst_label}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return _exit_for(res)


def cmd_path(args) -> int:
    inst, _dropped = _load_fit_inputs(args)
    result = harness.l1_path(inst, grid_size=args.grid_size, min_ratio=args.min_ratio,
                             gamma=args.gamma, eps_tol=args.eps_tol,
                             max_iters=args.max_iters, t_max_secs=args.t_max)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "path.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "support_size", "deviance", "ebic"])
        for pt in result.points:
            w.writerow([_fmt(pt.lam), pt.support_size, _fmt(pt.deviance), _fmt(pt.ebic)])
    sel = result.selected
    with open(os.path.join(args.out_dir, "selected.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "column_label", "estimate"])
        for lab, b in zip(inst.design.column_labels, sel.beta):
            if b != 0.0:
                w.writerow([_fmt(sel.lam), lab, _fmt(b)])
    with open(os.path.join(args.out_dir, "summary.json"), "w") as fh:
        json.dump({"schema": 1, "selected_lambda": sel.lam,
                   "selected_support_size": sel.support_size,
                   "selected_ebic": sel.ebic, "grid_size": len(result.points)},
                  fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.spec:
        spec = harness.ExperimentSpec.load(args.spec)
    else:
        if not args.scenario:
            raise InputError("need a scenario name or --spec file")
        scale = 1.0 if args.full_scale else args.scale
        spec = harness.ExperimentSpec(
            scenario=args.scenario,
            replications=args.replications,
            scale_factor=scale,
            roster=tuple(args.roster.split(",")),
            seed=args.seed,
            eps_tol=args.eps_tol,
            t_max_secs=args.t_max,
            table_setting=args.setting,
        )
    report = harness.run_experiment(spec, wall_clock=args.wall_clock, jobs=args.jobs)
    written = report.write(args.out_dir)
    for path in written:
        print(path)
    for solver, rep, err in report.failures:
        print(f"bench: {solver} failed on replication {rep}: {err}", file=sys.stderr)
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = harness.ExperimentSpec(
        scenario=args.scenario,
        scale_factor=args.scale,
        seed=args.seed,
        table_setting=args.setting,
        n_rows=args.n,
        n_cols=args.p,
    )
    inst = harness.gen_instance(spec, replication=0)
    written = harness.export_instance(inst, args.out_dir, name=args.scenario.replace("-", "_"))
    for path in written:
        print(path)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipscale",
        description="Iterative proportional scaling solvers for Poisson log-affine models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model and write beta/mu/trace/summary")
    fit.add_argument("--counts", help="grouped counts CSV (factor levels + count)")
    fit.add_argument("--schema", help="table schema JSON")
    fit.add_argument("--design", help="design triplet CSV (row,col,value)")
    fit.add_argument("--counts-vec", help="count vector CSV (row,count)")
    fit.add_argument("--offset", help="offset vector CSV (row,offset)")
    fit.add_argument("--out-dir", default=".", help="output directory")
    _add_solver_flags(fit)
    fit.set_defaults(func=cmd_fit)

    rake = sub.add_parser("rake", help="adjust a seed table to prescribed margins")
    rake.add_argument("--schema", required=True, help="table schema JSON")
    rake.add_argument("--seed-table", required=True,
                      help="seed table CSV (factor levels + value); missing cells are 0")
    rake.add_argument("--margin", action="append", default=[],
                      help="margin target CSV (subset factor levels + target); repeatable")
    rake.add_argument("--out-dir", default=".", help="output directory")
    _add_solver_flags(rake, default_eps=1e-10)
    rake.set_defaults(func=cmd_rake)

    path = sub.add_parser("path", help="l1 solution path with EBIC selection")
    path.add_argument("--counts", help="grouped counts CSV (factor levels + count)")
    path.add_argument("--schema", help="table schema JSON")
    path.add_argument("--design", help="design triplet CSV (row,col,value)")
    path.add_argument("--counts-vec", help="count vector CSV (row,count)")
    path.add_argument("--offset", help="offset vector CSV (row,offset)")
    path.add_argument("--out-dir", default=".", help="output directory")
    path.add_argument("--grid-size", type=int, default=50, help="penalty grid size (default 50)")
    path.add_argument("--min-ratio", type=float, default=1e-3,
                      help="smallest penalty as a fraction of lambda_max (default 1e-3)")
    path.add_argument("--gamma", type=float, default=1.0, help="EBIC gamma (default 1)")
    path.add_argument("--eps-tol", type=float, default=1e-8)
    path.add_argument("--t-max", type=float, default=600.0)
    path.add_argument("--max-iters", type=int, default=50_000)
    path.set_defaults(func=cmd_path)

    bench = sub.add_parser("bench", help="replicate a benchmark scenario at desk scale")
    bench.add_argument("scenario", nargs="?", default=None,
                       help=f"one of {', '.join(harness.SCENARIOS)}")
    bench.add_argument("--spec", default=None,
                       help="experiment spec JSON (overrides the other flags)")
    bench.add_argument("--roster", default="ips,a-ips", help="comma-separated solver list")
    bench.add_argument("--replications", type=int, default=20)
    bench.add_argument("--scale", type=float, default=0.3,
                       help="desk-scale shrink factor in (0,1] (default 0.3)")
    bench.add_argument("--full-scale", action="store_true",
                       help="run the scenario at its full published size")
    bench.add_argument("--setting", type=int, default=1, choices=[1, 2],
                       help="coefficient sparsity setting for table scenarios")
    bench.add_argument("--eps-tol", type=float, default=1e-4)
    bench.add_argument("--t-max", type=float, default=600.0)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--jobs", type=int, default=1, help="concurrent replications")
    bench.add_argument("--wall-clock", action="store_true",
                       help="report measured wall time instead of the deterministic work clock")
    bench.add_argument("--out-dir", default=".", help="output directory")
    bench.set_defaults(func=cmd_bench)

    gen = sub.add_parser("gen", help="generate and export a synthetic instance")
    gen.add_argument("scenario", help=f"one of {', '.join(harness.SCENARIOS)}")
    gen.add_argument("--n", type=int, default=None, help="rows (Gaussian scenarios)")
    gen.add_argument("--p", type=int, default=None, help="columns incl. intercept (Gaussian)")
    gen.add_argument("--scale", type=float, default=1.0, help="table shrink factor")
    gen.add_argument("--setting", type=int, default=1, choices=[1, 2])
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", default=".", help="output directory")
    gen.set_defaults(func=cmd_gen)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on unknown flags; the scripting contract says 1
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, DesignError, ModelError, SolverError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - the CLI maps anything else to exit 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
