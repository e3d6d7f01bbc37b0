"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s``.  The speed-ordering
criterion at the end replays the full-size moderate-table benchmark twenty
times and takes by far the longest.
"""

import json
import time

import numpy as np
import pytest

from ipscale import harness, model as mdl
from ipscale.cli import main as cli_main
from ipscale.design import TableSchema, build_raking_design, build_table_design
from ipscale.model import Coefficients, ProblemInstance
from ipscale.solvers import (
    SolverConfig,
    a_ips_fit,
    bips_fit,
    gis_fit,
    iis_fit,
    ips_fit,
    l1_ips_fit,
    l1_kkt_residuals,
    l1_threshold_update,
    mm_binary_fit,
    mm_general_fit,
    mm_parallel_fit,
    normalized_scaling_sequence,
    profiled_scaling_sequence,
    qips_fit,
    solve,
    x2_ips_fit,
)
from ipscale.surrogates import (
    surrogate_block,
    surrogate_quadratic,
    surrogate_rowsum,
    surrogate_signed,
    surrogate_uniform,
)

from conftest import (
    make_rng,
    oracle_beta,
    random_binary_instance,
    random_general_instance,
    random_nonneg_instance,
    table_instance_2x2,
)


def report(num: int, desc: str, ok: bool, detail: str = "") -> None:
    import conftest

    line = f"[criterion {num:02d}] {desc}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    conftest.acceptance_lines.append(line)
    assert ok, line


def nll(inst, beta):
    return mdl.neg_log_likelihood(inst, Coefficients.from_beta(inst, beta))


def test_criterion_01_design_dimensions():
    t0 = time.perf_counter()
    two_way = build_table_design(
        TableSchema(factors=tuple((f"f{i}", 10) for i in range(4)), interaction_order=2))
    three_way = build_table_design(
        TableSchema(factors=tuple((f"f{i}", 10) for i in range(5)), interaction_order=3))
    elapsed = time.perf_counter() - t0
    ok = (two_way.shape == (10_000, 523) and three_way.shape == (100_000, 8146)
          and elapsed < 5.0)
    report(1, "table design dimensions 523 / 8146 in < 5 s", ok,
           f"{two_way.shape}, {three_way.shape}, {elapsed:.2f}s")


def test_criterion_02_oracle_equivalence():
    t0 = time.perf_counter()
    worst = {}
    for i in range(10):
        binary = random_binary_instance(100 + i, n_rows=60, n_cols=8)
        nonneg = random_nonneg_instance(200 + i, n_rows=50, n_cols=6)
        general = random_general_instance(300 + i, n_rows=50, n_cols=7)
        for inst, roster in (
            (binary, ("ips", "a-ips", "mm-binary")),
            (nonneg, ("gis", "iis")),
            (general, ("mm-general", "q-ips", "b-ips")),
        ):
            target = oracle_beta(inst)
            for variant in roster:
                cfg = SolverConfig(variant=variant, eps_tol=1e-8, seed=i,
                                   max_iters=500_000, record_every=10)
                res = solve(inst, cfg)
                err = float(np.max(np.abs(res.beta - target)))
                worst[variant] = max(worst.get(variant, 0.0), err)
        # both curvature bounds for the momentum solver
        target = oracle_beta(general)
        res = qips_fit(general, SolverConfig(variant="q-ips", eps_tol=1e-8, seed=i,
                                             w_choice="spectral", max_iters=500_000,
                                             record_every=10))
        worst["q-ips/spectral"] = max(worst.get("q-ips/spectral", 0.0),
                                      float(np.max(np.abs(res.beta - target))))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-6 for v in worst.values()) and elapsed < 60.0
    detail = ", ".join(f"{k}:{v:.1e}" for k, v in sorted(worst.items())) + f", {elapsed:.1f}s"
    report(2, "every variant reaches the dense-Newton solution to 1e-6", ok, detail)


def test_criterion_03_descent_suites():
    ok = True
    details = []
    cases = [
        ("ips", ips_fit, random_binary_instance(400, 50, 8)),
        ("a-ips", a_ips_fit, random_binary_instance(401, 50, 8)),
        ("mm-binary", mm_binary_fit, random_binary_instance(402, 40, 7)),
        ("l1-ips", l1_ips_fit, random_binary_instance(403, 40, 7)),
        ("gis", gis_fit, random_nonneg_instance(404, 40, 6)),
        ("mm-general", mm_general_fit, random_general_instance(405, 40, 6)),
        ("mm-parallel", mm_parallel_fit, random_nonneg_instance(406, 40, 6)),
        ("iis", iis_fit, random_nonneg_instance(407, 40, 6)),
        ("b-ips", bips_fit, random_general_instance(408, 40, 7)),
    ]
    for name, fit, inst in cases:
        cfg = SolverConfig(variant=name, eps_tol=1e-8, lam=2.0 if name == "l1-ips" else 0.0,
                           max_iters=50_000)
        obj = fit(inst, cfg).trace.objectives()
        good = bool(np.all(np.diff(obj) <= 1e-9 * (1.0 + np.abs(obj[:-1]))))
        ok &= good
        if not good:
            details.append(name)
    spec = harness.ExperimentSpec(scenario="table-moderate", scale_factor=0.3, seed=17)
    table = harness.gen_table_instance(spec, 0)
    res = ips_fit(table, SolverConfig(variant="ips", eps_tol=1e-8, track_g2=True))
    g2 = res.diagnostics["g2_after_intercept"]
    g2_ok = bool(np.all(np.diff(g2) <= 1e-9 * (1.0 + np.abs(g2[:-1]))))
    ok &= g2_ok
    report(3, "objective and deviance descent for every variant", ok,
           "violations: " + (", ".join(details) + (" g2" if not g2_ok else "") or "none"))


def test_criterion_04_recursion_equivalence():
    rng = make_rng(500)
    arr = np.hstack([np.ones((20, 1)), rng.uniform(0.05, 0.8, size=(20, 5))])
    from ipscale.design import DesignMatrix

    X = DesignMatrix.from_dense(arr)
    counts = rng.poisson(6.0, size=20).astype(float) + 1.0
    inst = ProblemInstance.from_counts(X, counts)
    a = profiled_scaling_sequence(inst, 10)
    b = normalized_scaling_sequence(inst, 10)
    gap = max(float(np.max(np.abs(sa - sb))) for sa, sb in zip(a, b))
    report(4, "profiled and normalized scaling recursions agree to 1e-10", gap <= 1e-10,
           f"max gap {gap:.2e} over 10 iterations on 20x6")


def test_criterion_05_surrogate_majorization():
    rng = make_rng(600)
    binary = random_binary_instance(601, 30, 6)
    nonneg = random_nonneg_instance(602, 30, 6)
    general = random_general_instance(603, 30, 6)
    blocks = [np.arange(0, 3), np.arange(3, 6)]
    W = mdl.bohning_bound(general)
    checks = {
        "uniform": (binary, lambda b, r: surrogate_uniform(binary, b, r), 6),
        "rowsum": (nonneg, lambda b, r: surrogate_rowsum(nonneg, b, r), 6),
        "signed": (general, lambda b, r: surrogate_signed(general, b, r), 6),
        "block": (nonneg, lambda b, r: surrogate_block(nonneg, b, r, blocks), 6),
    }
    violations = {}
    for name, (inst, fn, p) in checks.items():
        bad = 0
        for _ in range(1000):
            ref = rng.normal(0.0, 0.5, size=p)
            beta = ref + rng.normal(0.0, 0.6, size=p)
            scale = 1.0 + abs(nll(inst, ref))
            if fn(beta, ref) < nll(inst, beta) - 1e-9 * scale:
                bad += 1
        ref = rng.normal(0.0, 0.5, size=p)
        if abs(fn(ref, ref) - nll(inst, ref)) > 1e-12 * (1.0 + abs(nll(inst, ref))):
            bad += 1
        violations[name] = bad
    p_slope = general.n_cols - 1
    bad_q = 0
    for _ in range(1000):
        ref = rng.normal(0.0, 0.5, size=p_slope)
        slope = ref + rng.normal(0.0, 0.6, size=p_slope)
        Lref = mdl.reparam_objective(general, ref)
        if surrogate_quadratic(general, slope, ref, W) < mdl.reparam_objective(general, slope) - 1e-9 * (1 + abs(Lref)):
            bad_q += 1
    ref = rng.normal(0.0, 0.5, size=p_slope)
    if abs(surrogate_quadratic(general, ref, ref, W) - mdl.reparam_objective(general, ref)) \
            > 1e-12 * (1.0 + abs(mdl.reparam_objective(general, ref))):
        bad_q += 1
    violations["quadratic"] = bad_q
    ok = all(v == 0 for v in violations.values())
    report(5, "surrogates dominate the objective at 1000 sampled points each", ok,
           str(violations))


def test_criterion_06_gradient_checks():
    from test_model import fd_gradient

    inst = random_general_instance(700, 40, 7)
    rng = make_rng(700)
    worst_l = 0.0
    for _ in range(50):
        beta = rng.normal(0.0, 0.7, size=7)
        g = mdl.gradient(inst, Coefficients.from_beta(inst, beta))
        g_fd = fd_gradient(lambda b: nll(inst, b), beta)
        worst_l = max(worst_l, float(np.max(np.abs(g - g_fd)) / (1.0 + np.max(np.abs(g)))))
    worst_L = 0.0
    for _ in range(50):
        slope = rng.normal(0.0, 0.7, size=6)
        g = mdl.reparam_gradient(inst, slope)
        g_fd = fd_gradient(lambda sl: mdl.reparam_objective(inst, sl), slope)
        worst_L = max(worst_L, float(np.max(np.abs(g - g_fd)) / (1.0 + np.max(np.abs(g)))))
    ok = worst_l <= 1e-6 and worst_L <= 1e-6
    report(6, "analytic gradients match central differences at 50 points", ok,
           f"raw {worst_l:.1e}, profiled {worst_L:.1e}")


def test_criterion_07_margin_matching_and_raking():
    spec = harness.ExperimentSpec(scenario="table-moderate", scale_factor=0.3, seed=19)
    table = harness.gen_table_instance(spec, 0)
    res = ips_fit(table, SolverConfig(variant="ips", eps_tol=1e-12, max_iters=500_000))
    rel = np.abs(table.design.rmatvec(res.mu) - table.suff_stats) / table.suff_stats
    margins_ok = bool(np.max(rel) <= 1e-8)

    schema = TableSchema(factors=(("row", 2), ("col", 2)), interaction_order=1)
    X = build_raking_design(schema, [["row"], ["col"]])
    s = np.array([4.0, 3.0, 1.0, 2.0, 2.0])
    inst = ProblemInstance.from_suff_stats(X, s)
    rake = ips_fit(inst, SolverConfig(variant="ips", eps_tol=1e-12))
    rake_ok = bool(np.max(np.abs(rake.mu - [1.5, 1.5, 0.5, 0.5])) <= 1e-10)
    report(7, "fitted margins match statistics; uniform-seed raking exact",
           margins_ok and rake_ok,
           f"margin rel {np.max(rel):.1e}, rake err {np.max(np.abs(rake.mu - [1.5, 1.5, 0.5, 0.5])):.1e}")


def test_criterion_08_l1_correctness():
    zero_branch = l1_threshold_update(1, 0.0, s_j=2.0, col_mu_sum=2.0, lam=1.0) == 0.0
    active = l1_threshold_update(1, 0.0, s_j=6.0, col_mu_sum=2.0, lam=2.0)
    kkt_scalar = abs(2.0 * np.exp(active) - 6.0 + 2.0)
    lemma_ok = zero_branch and abs(active - np.log(2.0)) <= 1e-12 and kkt_scalar <= 1e-10

    inst = table_instance_2x2()
    a = ips_fit(inst, SolverConfig(variant="ips", eps_tol=1e-10))
    b = l1_ips_fit(inst, SolverConfig(variant="l1-ips", lam=0.0, eps_tol=1e-10))
    identical = (np.array_equal(a.beta, b.beta)
                 and all(x.objective == y.objective and x.rel_gradient == y.rel_gradient
                         for x, y in zip(a.trace.records, b.trace.records)))

    spec = harness.ExperimentSpec(scenario="l1-path", scale_factor=0.25, seed=23)
    path_inst = harness.gen_table_instance(spec, 0)
    result = harness.l1_path(path_inst, grid_size=15, min_ratio=1e-3, eps_tol=1e-10)
    kkt_ok = True
    for pt in result.points:
        mu = path_inst.offset * np.exp(path_inst.design.matvec(pt.beta))
        resid = l1_kkt_residuals(path_inst, pt.beta, mu, pt.lam)
        kkt_ok &= bool(np.max(resid) <= 1e-6 * (1.0 + path_inst.counts.sum()))
    lam_max = harness.lambda_max(path_inst)
    empty = l1_ips_fit(path_inst, SolverConfig(variant="l1-ips", lam=1.01 * lam_max,
                                               eps_tol=1e-10))
    empty_ok = int(np.count_nonzero(empty.beta[1:])) == 0
    ok = lemma_ok and identical and kkt_ok and empty_ok
    report(8, "thresholding cases, zero-penalty identity, path KKT, empty top", ok,
           f"lemma={lemma_ok} identical={identical} kkt={kkt_ok} empty={empty_ok}")


def test_criterion_09_pearson_stationarity():
    inst = table_instance_2x2()
    res = x2_ips_fit(inst, SolverConfig(variant="x2-ips", eps_tol=1e-12))
    resid = inst.design.rmatvec(res.mu - inst.counts**2 / res.mu)
    spec = harness.ExperimentSpec(scenario="table-moderate", scale_factor=0.3, seed=29)
    table = harness.gen_table_instance(spec, 0)
    res2 = x2_ips_fit(table, SolverConfig(variant="x2-ips", eps_tol=1e-9, max_iters=200_000))
    obj = res2.trace.objectives()
    monotone = bool(np.all(np.diff(obj) <= 1e-9 * (1.0 + np.abs(obj[:-1]))))
    ok = float(np.max(np.abs(resid))) <= 1e-8 and monotone
    report(9, "Pearson variant stationarity and per-sweep descent", ok,
           f"residual {np.max(np.abs(resid)):.1e}, monotone={monotone}")


def test_criterion_10_linear_rate():
    inst0 = random_binary_instance(800, 60, 8)
    target = oracle_beta(inst0)
    inst = ProblemInstance.from_counts(inst0.design, inst0.counts, beta_true=target)
    res = ips_fit(inst, SolverConfig(variant="ips", eps_tol=1e-11, max_iters=500_000))
    err = np.array([r.est_error for r in res.trace.records])
    iters = np.array([r.iteration for r in res.trace.records], dtype=float)
    keep = err > 1e-22  # above the float noise floor
    err, iters = err[keep], iters[keep]
    k0 = max(1, int(0.4 * len(err)))
    y = 0.5 * np.log(err[k0:])
    t = iters[k0:]
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    r2 = 1.0 - resid.var() / y.var()
    ok = slope < 0.0 and r2 >= 0.95
    report(10, "log-error tail is linear with negative slope", ok,
           f"slope {slope:.3e}, R^2 {r2:.4f}, tail {len(y)} records")


def test_criterion_12_determinism(tmp_path):
    import csv as _csv

    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({
        "factors": [{"name": "row", "levels": 2}, {"name": "col", "levels": 2}],
        "order": 1}))
    cpath = tmp_path / "counts.csv"
    with open(cpath, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["row", "col", "count"])
        for (r, c), n in zip([(1, 1), (1, 2), (2, 1), (2, 2)], [10, 20, 50, 20]):
            w.writerow([r, c, n])
    pairs = []
    for tag in ("a", "b"):
        out = tmp_path / f"fit_{tag}"
        code = cli_main(["fit", "--counts", str(cpath), "--schema", str(schema),
                         "--solver", "a-ips", "--seed", "11", "--out-dir", str(out)])
        assert code == 0
        pairs.append(out)
    trace_same = (pairs[0] / "trace.csv").read_bytes() == (pairs[1] / "trace.csv").read_bytes()
    gen_pairs = []
    for tag in ("a", "b"):
        out = tmp_path / f"gen_{tag}"
        code = cli_main(["gen", "general", "--n", "80", "--p", "8", "--seed", "5",
                         "--out-dir", str(out)])
        assert code == 0
        gen_pairs.append(out)
    import os

    gen_same = all(
        (gen_pairs[0] / n).read_bytes() == (gen_pairs[1] / n).read_bytes()
        for n in sorted(os.listdir(gen_pairs[0])))
    ok = trace_same and gen_same
    report(12, "identical seeds give byte-identical trace and instance files", ok,
           f"trace={trace_same} gen={gen_same}")


@pytest.mark.slow
def test_criterion_11_speed_ordering():
    spec = harness.ExperimentSpec(scenario="table-moderate", scale_factor=1.0, seed=0)
    n_reps = 20
    bips_wins = 0
    aips_ratio_max = 0.0
    for rep in range(n_reps):
        inst = harness.gen_instance(spec, rep)
        times = {}
        for variant, fit in (("ips", ips_fit), ("a-ips", a_ips_fit), ("b-ips", bips_fit)):
            cfg = SolverConfig(variant=variant, eps_tol=1e-4, seed=rep, max_iters=100_000)
            t0 = time.perf_counter()
            res = fit(inst, cfg)
            times[variant] = time.perf_counter() - t0
            assert res.converged, f"{variant} failed to reach tolerance on rep {rep}"
        bips_wins += times["b-ips"] < times["ips"]
        aips_ratio_max = max(aips_ratio_max, times["a-ips"] / times["ips"])
    ok = bips_wins >= 16 and aips_ratio_max <= 2.0
    report(11, "block solver beats plain scaling in >= 16/20 runs; randomized <= 2x", ok,
           f"b-ips wins {bips_wins}/20, worst a-ips ratio {aips_ratio_max:.2f}")
