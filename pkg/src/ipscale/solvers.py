"""Iterative solvers for Poisson log-affine maximum likelihood.

All fitters share one contract: they take a :class:`ProblemInstance` and a
:class:`SolverConfig`, maintain the fitted mean multiplicatively alongside
the coefficients, record a convergence trace, and stop when the relative
gradient  ||g_t||_inf / ||g_0||_inf  drops to ``eps_tol`` (inclusive) or a
time/iteration limit is hit.

Variants
--------
ips          cyclic coordinate descent with the closed-form binary update
a-ips        same, with a fresh random coordinate permutation per sweep
x2-ips       cyclic descent minimizing the Pearson chi-square statistic
mm-binary    synchronized multiplicative update with step 1/p (binary)
gis          synchronized update with step 1/R, R = max row sum (non-negative)
mm-general   per-coordinate quadratic-in-exp closed form for signed designs
mm-parallel  block-separable surrogate, all blocks updated at once
iis          intercept-profiled scaling with one 1-D solve per coordinate
q-ips        fixed quadratic curvature bound plus momentum on the profiled
             objective (ridge-q-ips adds an l2 penalty on the slopes)
b-ips        randomized block coordinate descent with a dense Newton subsolver
newton       dense Newton with Armijo backtracking (baseline / oracle)
l1-ips       cyclic soft-thresholded scaling for the l1-penalized objective

Traces carry both measured wall seconds and a deterministic work counter
(nominal floating-point operations; serialized as seconds at 1e9 units/s)
so that trace files are byte-reproducible under a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import model as mdl
from .design import KIND_BINARY, KIND_GENERAL
from .model import Coefficients, ProblemInstance

TOL_REACHED = "tol_reached"
TIME_LIMIT = "time_limit"
ITER_LIMIT = "iter_limit"
DIVERGED = "diverged"

WORK_UNITS_PER_SECOND = 1e9

_VARIANTS = (
    "ips", "a-ips", "x2-ips", "mm-binary", "gis", "mm-general", "mm-parallel",
    "iis", "q-ips", "ridge-q-ips", "b-ips", "newton", "l1-ips",
)


class SolverError(ValueError):
    """Solver contract violation (wrong design kind, bad config, ...)."""


@dataclass
class SolverConfig:
    variant: str = "ips"
    eps_tol: float = 1e-4
    t_max_secs: float = 600.0
    max_iters: int = 100_000
    lam: float = 0.0
    block_sizes: tuple[int, ...] | None = None
    w_choice: str = "bohning"  # or "spectral"
    seed: int = 0
    beta_init: np.ndarray | None = None
    clamp: float = mdl.BETA_CLAMP
    inner_tol: float = 1e-10
    inner_max_iters: int = 50
    record_every: int = 1
    track_g2: bool = False
    track_block_objective: bool = False

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise SolverError(f"unknown variant {self.variant!r}; one of {_VARIANTS}")
        if self.eps_tol <= 0:
            raise SolverError("eps_tol must be positive")
        if self.lam < 0:
            raise SolverError("lambda must be non-negative")
        if self.w_choice not in ("bohning", "spectral"):
            raise SolverError("w_choice must be 'bohning' or 'spectral'")
        if self.record_every < 1:
            raise SolverError("record_every must be >= 1")


@dataclass
class TraceRecord:
    iteration: int
    wall_seconds: float
    work_units: float
    objective: float
    rel_gradient: float
    est_error: float | None = None

    @property
    def work_seconds(self) -> float:
        return self.work_units / WORK_UNITS_PER_SECOND


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord] = field(default_factory=list)
    termination: str = ""
    g0_norm: float = 0.0

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def rel_gradients(self) -> np.ndarray:
        return np.array([r.rel_gradient for r in self.records])

    def final(self) -> TraceRecord:
        return self.records[-1]


@dataclass
class FitResult:
    variant: str
    beta: np.ndarray
    mu: np.ndarray
    trace: ConvergenceTrace
    flags: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def termination(self) -> str:
        return self.trace.termination

    @property
    def converged(self) -> bool:
        return self.trace.termination == TOL_REACHED

    @property
    def wall_seconds(self) -> float:
        return self.trace.final().wall_seconds


def check_stop(trace: ConvergenceTrace, cfg: SolverConfig) -> bool:
    """Stopping rule on the latest record (relative gradient is inclusive)."""
    if not trace.records:
        return False
    rec = trace.final()
    if trace.g0_norm == 0.0:
        return True
    return (
        rec.rel_gradient <= cfg.eps_tol
        or rec.wall_seconds >= cfg.t_max_secs
        or rec.iteration >= cfg.max_iters
    )


class _Run:
    """Shared trace recording plus the stop decision for all fitters."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        self.t0 = time.perf_counter()
        self.trace = ConvergenceTrace()
        self.work = 0.0

    def start(self, obj: float, gnorm: float, est: float | None) -> bool:
        self.trace.g0_norm = gnorm
        rel = 0.0 if gnorm == 0.0 else 1.0
        self.trace.records.append(TraceRecord(0, 0.0, 0.0, obj, rel, est))
        if gnorm == 0.0:
            self.trace.termination = TOL_REACHED
            return True
        return False

    def record(self, iteration: int, obj: float, gnorm: float, est: float | None) -> bool:
        wall = time.perf_counter() - self.t0
        rel = gnorm / self.trace.g0_norm
        self.trace.records.append(TraceRecord(iteration, wall, self.work, obj, rel, est))
        if np.isnan(obj) or np.isnan(rel):
            self.trace.termination = DIVERGED
            return True
        if rel <= self.cfg.eps_tol:
            self.trace.termination = TOL_REACHED
            return True
        if wall >= self.cfg.t_max_secs:
            self.trace.termination = TIME_LIMIT
            return True
        if iteration >= self.cfg.max_iters:
            self.trace.termination = ITER_LIMIT
            return True
        return False

    def out_of_time(self) -> bool:
        return time.perf_counter() - self.t0 >= self.cfg.t_max_secs

    def at_cadence(self, iteration: int) -> bool:
        return iteration % self.cfg.record_every == 0 or iteration >= self.cfg.max_iters


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based with a fixed published algorithm, so permutation
    # streams reproduce across platforms; permutations are Fisher-Yates.
    return np.random.Generator(np.random.Philox(seed))


def _nnz(design) -> float:
    if design.csc is not None:
        return float(design.csc.indptr[-1])
    return float(design.n_rows * design.n_cols)


def _est_error(beta: np.ndarray, beta_true: np.ndarray | None) -> float | None:
    if beta_true is None:
        return None
    denom = float(beta_true @ beta_true)
    if denom == 0.0:
        return None
    diff = beta - beta_true
    return float(diff @ diff) / denom


def _init_beta(cfg: SolverConfig, p: int) -> np.ndarray:
    if cfg.beta_init is None:
        return np.zeros(p)
    b = np.asarray(cfg.beta_init, dtype=np.float64).copy()
    if b.shape != (p,):
        raise SolverError(f"beta_init must have length {p}")
    return np.clip(b, -cfg.clamp, cfg.clamp)


def _init_slope(cfg: SolverConfig, p: int) -> np.ndarray:
    """Slope start for intercept-profiled variants; accepts p or p-1 length."""
    if cfg.beta_init is None:
        return np.zeros(p - 1)
    b = np.asarray(cfg.beta_init, dtype=np.float64)
    if b.shape == (p - 1,):
        return np.clip(b.copy(), -cfg.clamp, cfg.clamp)
    if b.shape == (p,):
        return np.clip(b[1:].copy(), -cfg.clamp, cfg.clamp)
    raise SolverError(f"beta_init must have length {p} or {p - 1}")


# ---------------------------------------------------------------------------
# Cyclic coordinate descent family: ips, a-ips, x2-ips, l1-ips
# ---------------------------------------------------------------------------


def _cd_fit(inst: ProblemInstance, cfg: SolverConfig, *, variant: str,
            randomize: bool, pearson: bool = False, lam: float = 0.0,
            _perm_fn=None) -> FitResult:
    X = inst.design
    if X.kind != KIND_BINARY:
        raise SolverError(
            f"{variant} uses the closed-form binary update; "
            "use the mm-general variant for non-binary designs")
    if pearson and inst.counts is None:
        raise SolverError("x2-ips needs the full count vector")
    if lam > 0 and not X.has_intercept:
        raise SolverError("l1-ips needs an intercept as design column 0")
    p = X.n_cols
    s = inst.suff_stats
    B = cfg.clamp
    beta = _init_beta(cfg, p)
    c = Coefficients.from_beta(inst, beta)
    mu = c.mu
    n = inst.counts
    nsq = n * n if pearson else None
    nnz = _nnz(X)
    N = X.n_rows
    rng = _rng(cfg.seed)
    divergent: set[int] = set()
    g2_after_intercept: list[float] = []

    def grad_norm() -> float:
        if pearson:
            with np.errstate(divide="ignore", invalid="ignore"):
                resid = mu - nsq / mu
            g = X.rmatvec(resid)
            return float(np.max(np.abs(g)))
        g = X.rmatvec(mu) - s
        if lam > 0:
            r = np.abs(g).copy()
            act = np.nonzero(beta[1:] != 0.0)[0] + 1
            r[act] = np.abs(g[act] + lam * np.sign(beta[act]))
            zer = np.nonzero(beta[1:] == 0.0)[0] + 1
            r[zer] = np.maximum(0.0, np.abs(g[zer]) - lam)
            return float(np.max(r))
        return float(np.max(np.abs(g)))

    def objective() -> float:
        if pearson:
            return mdl.pearson_x2(n, mu)
        val = -float(s @ beta) + float(mu.sum())
        if not np.isfinite(val):
            return np.inf if not np.isnan(val) else np.nan
        if lam > 0:
            val += lam * float(np.abs(beta[1:]).sum())
        return val

    run = _Run(cfg)
    if run.start(objective(), grad_norm(), _est_error(beta, inst.beta_true)):
        return _finish(variant, inst, beta, mu, run, divergent)

    supports = [X.col_support(j) for j in range(p)]
    base_order = range(p)
    track = bool(cfg.track_g2 and n is not None and X.has_intercept)
    log, exp = np.log, np.exp

    def sweep(order) -> bool:
        changed = False
        first = True
        for j in order:
            supp = supports[j]
            den = mu[supp].sum()
            if pearson:
                num = (nsq[supp] / mu[supp]).sum()
                if num > 0.0 and den > 0.0 and np.isfinite(num):
                    b_new = beta[j] + 0.5 * log(num / den)
                    if not -B <= b_new <= B:
                        b_new = min(max(b_new, -B), B)
                        divergent.add(j)
                else:
                    b_new = -B if num <= 0.0 else B
                    divergent.add(j)
            elif lam > 0.0 and j != 0:
                delta = s[j] - exp(-beta[j]) * den
                if abs(delta) <= lam:
                    b_new = 0.0
                else:
                    num = s[j] - lam * np.sign(delta)
                    if num > 0.0 and den > 0.0:
                        b_new = beta[j] + log(num / den)
                        if not -B <= b_new <= B:
                            b_new = min(max(b_new, -B), B)
                            divergent.add(j)
                    else:
                        b_new = -B if num <= 0.0 else B
                        divergent.add(j)
            else:
                num = s[j]
                if num > 0.0 and den > 0.0:
                    b_new = beta[j] + log(num / den)
                    if not -B <= b_new <= B or not np.isfinite(b_new):
                        b_new = min(max(b_new, -B), B)
                        divergent.add(j)
                else:
                    b_new = -B if num <= 0.0 else B
                    divergent.add(j)
            d = b_new - beta[j]
            if d != 0.0:
                mu[supp] *= exp(d)
                beta[j] = b_new
                changed = True
            if first and track and j == 0:
                g2_after_intercept.append(mdl.g_squared(n, mu))
            first = False
        return changed

    it = 0
    while True:
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            if randomize:
                order = _perm_fn(rng, p) if _perm_fn is not None else rng.permutation(p)
                changed = sweep(order)
            else:
                changed = sweep(base_order)
        it += 1
        if not changed:
            # exact fixed point of the update map (typical for warm starts at
            # the optimum): the relative-gradient rule can never fire because
            # g0 was measured at the same stationary state
            run.record(it, objective(), grad_norm(), _est_error(beta, inst.beta_true))
            if not run.trace.termination:
                run.trace.termination = TOL_REACHED
            break
        run.work += (3.0 if pearson else 2.0) * nnz + 3.0 * N
        if it % 64 == 0:
            # guard against multiplicative drift on long runs
            eta = X.matvec(beta)
            np.exp(eta, out=mu)
            mu *= inst.offset
        if run.at_cadence(it):
            run.work += nnz + p
            if run.record(it, objective(), grad_norm(), _est_error(beta, inst.beta_true)):
                break
        elif run.out_of_time():
            run.record(it, objective(), grad_norm(), _est_error(beta, inst.beta_true))
            break

    res = _finish(variant, inst, beta, mu, run, divergent)
    if g2_after_intercept:
        res.diagnostics["g2_after_intercept"] = np.array(g2_after_intercept)
    return res


def _finish(variant, inst, beta, mu, run, divergent, diagnostics=None) -> FitResult:
    if not run.trace.termination:
        run.trace.termination = ITER_LIMIT
    flags = {"divergent_coordinates": sorted(divergent)}
    return FitResult(variant=variant, beta=beta, mu=mu, trace=run.trace,
                     flags=flags, diagnostics=diagnostics or {})


def ips_fit(inst: ProblemInstance, cfg: SolverConfig | None = None) -> FitResult:
    cfg = cfg or SolverConfig(variant="ips")
    return _cd_fit(inst, cfg, variant="ips", randomize=False)


def a_ips_fit(inst: ProblemInstance, cfg: SolverConfig | None = None, *, _perm_fn=None) -> FitResult:
    cfg = cfg or SolverConfig(variant="a-ips")
    return _cd_fit(inst, cfg, variant="a-ips", randomize=True, _perm_fn=_perm_fn)


def x2_ips_fit(inst: ProblemInstance, cfg: SolverConfig | None = None) -> FitResult:
    cfg = cfg or SolverConfig(variant="x2-ips")
    return _cd_fit(inst, cfg, variant="x2-ips", randomize=False, pearson=True)


def l1_ips_fit(inst: ProblemInstance, cfg: SolverConfig | None = None) -> FitResult:
    cfg = cfg or SolverConfig(variant="l1-ips")
    return _cd_fit(inst, cfg, variant="l1-ips", randomize=False, lam=cfg.lam)


def l1_threshold_update(j: int, beta_j: float, s_j: float, col_mu_sum: float,
                        lam: float, clamp: float = mdl.BETA_CLAMP) -> float:
    """Soft-thresholded coordinate update for a penalized binary column.

    Returns the new beta_j given the current column statistics; the zero
    branch is taken on ties |delta| = lam.
    """
    delta = s_j - np.exp(-beta_j) * col_mu_sum
    if lam > 0.0 and abs(delta) <= lam:
        return 0.0
    num = s_j - lam * np.sign(delta)
    if num <= 0.0 or col_mu_sum <= 0.0:
        return -clamp if num <= 0.0 else clamp
    return float(np.clip(beta_j + np.log(num / col_mu_sum), -clamp, clamp))


def l1_kkt_residuals(inst: ProblemInstance, beta: np.ndarray, mu: np.ndarray,
                     lam: float) -> np.ndarray:
    """Per-coordinate stationarity residuals of the l1-penalized objective."""
    g = inst.design.rmatvec(mu) - inst.suff_stats
    res = np.abs(g).copy()
    slope = beta[1:]
    act = np.nonzero(slope != 0.0)[0] + 1
    res[act] = np.abs(g[act] + lam * np.sign(beta[act]))
    zer = np.nonzero(slope == 0.0)[0] + 1
    res[zer] = np.maximum(0.0, np.abs(g[zer]) - lam)
    return res


# ---------------------------------------------------------------------------
# Synchronized multiplicative (surrogate-based) family
# ---------------------------------------------------------------------------


def _apply_sync_step(inst, beta, mu, delta, B, divergent) -> None:
    """Clamp a synchronized step coordinate-wise and rescale mu in place."""
    new_beta = np.clip(beta + delta, -B, B)
    hit = (new_beta != beta + delta) | ~np.isfinite(delta)
    if np.any(hit):
        bad = np.nonzero(hit)[0]
        divergent.update(int(j) for j in bad)
        new_beta[~np.isfinite(new_beta)] = 0.0
    actual = new_beta - beta
    eta = inst.design.matvec(actual)
    with np.errstate(over="ignore"):
        mu *= np.exp(eta)
    beta[:] = new_beta


def _ratio_step(inst, beta, mu, step_size, B, divergent) -> None:
    s = inst.suff_stats
    den = inst.design.rmatvec(mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = step_size * np.log(s / den)
    delta = np.where(s <= 0.0, -np.inf, delta)
    delta = np.where((den <= 0.0) & (s > 0.0), np.inf, delta)
    _apply_sync_step(inst, beta, mu, delta, B, divergent)


def mm_binary_step(inst: ProblemInstance, c: Coefficients,
                   clamp: float = mdl.BETA_CLAMP, divergent: set | None = None) -> Coefficients:
    """Synchronized update beta += (1/p) log(X^T n / X^T mu) for binary designs."""
    if inst.design.kind != KIND_BINARY:
        raise SolverError("mm-binary requires a binary design")
    divergent = set() if divergent is None else divergent
    _ratio_step(inst, c.beta, c.mu, 1.0 / inst.n_cols, clamp, divergent)
    return c

def gis_step(inst: ProblemInstance, c: Coefficients,
             clamp: float = mdl.BETA_CLAMP, divergent: set | None = None) -> Coefficients:
    """Synchronized update beta += (1/R) log(X^T n / X^T mu), R = max row sum."""
    if inst.design.kind == KIND_GENERAL:
        raise SolverError("gis requires a non-negative design")
    divergent = set() if divergent is None else divergent
    _ratio_step(inst, c.beta, c.mu, 1.0 / inst.design.row_sum_max, clamp, divergent)
    return c


def mm_general_step(inst: ProblemInstance, c: Coefficients,
                    clamp: float = mdl.BETA_CLAMP, divergent: set | None = None) -> Coefficients:
    """Per-coordinate exact minimization of the signed-design surrogate.

    For each column, with a = <x_j+, mu>, b = <x_j, n>, c = <x_j-, mu>, the
    step solves a*u^2 - b*u - c = 0 for u = exp(R * delta_j) and takes the
    positive root; the boundary cases push the coordinate to the clamp.
    """
    divergent = set() if divergent is None else divergent
    X = inst.design
    R = X.row_sum_max
    Xp, Xn = X.pos_neg_parts()
    a = Xp.T @ c.mu
    b = inst.suff_stats
    cc = Xn.T @ c.mu
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        root = (b + np.sqrt(b * b + 4.0 * a * cc)) / (2.0 * a)
    delta = np.empty_like(b)
    pos = a > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        delta[pos] = np.log(root[pos]) / R
    zero_a = ~pos
    neg_b = zero_a & (b < 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta[neg_b] = np.log(cc[neg_b] / (-b[neg_b])) / R
    # a = 0 with b > 0, or a = b = 0 with mass on the negative part: the
    # surrogate has no finite stationary point and the coordinate diverges up.
    up = zero_a & ((b > 0.0) | ((b == 0.0) & (cc > 0.0)))
    delta[up] = np.inf
    rest = zero_a & ~neg_b & ~up
    delta[rest] = 0.0
    _apply_sync_step(inst, c.beta, c.mu, delta, clamp, divergent)
    return c


def _auto_blocks(total: int, block_sizes, *, what: str) -> list[np.ndarray]:
    if block_sizes is None:
        size = min(200, total) if total > 0 else 0
        sizes = []
        left = total
        while left > 0:
            take = min(size, left)
            sizes.append(take)
            left -= take
    else:
        sizes = list(block_sizes)
        if sum(sizes) != total or any(g <= 0 for g in sizes):
            raise SolverError(f"block sizes must be positive and sum to {total} for {what}")
    out = []
    off = 0
    for g in sizes:
        out.append(np.arange(off, off + g))
        off += g
    return out


def mm_parallel_step(inst: ProblemInstance, c: Coefficients, blocks,
                     clamp: float = mdl.BETA_CLAMP, divergent: set | None = None,
                     inner_tol: float = 1e-10, inner_max: int = 50,
                     flags: dict | None = None) -> Coefficients:
    """Simultaneous block update of the separable non-negative surrogate.

    Every block minimizes its own term of the surrogate (independently,
    from the shared current mean) via damped Newton; the mean is then
    rescaled once for the combined step.
    """
    if inst.design.kind == KIND_GENERAL:
        raise SolverError("mm-parallel requires a non-negative design")
    divergent = set() if divergent is None else divergent
    X = inst.design
    rowsum = X.abs_row_sums()
    delta = np.zeros(X.n_cols)
    for cols in blocks:
        Xk = X.submatrix(cols)
        rows_k = np.asarray(Xk.sum(axis=1)).ravel() if sp.issparse(Xk) else Xk.sum(axis=1)
        active = rows_k > 0.0
        r = np.zeros(X.n_rows)
        r[active] = rowsum[active] / rows_k[active]
        d, ok = _surrogate_block_newton(
            Xk, inst.suff_stats[cols], c.mu, r, active, inner_tol, inner_max)
        if not ok and flags is not None:
            flags["block_step_failures"] = flags.get("block_step_failures", 0) + 1
        delta[cols] = d
    _apply_sync_step(inst, c.beta, c.mu, delta, clamp, divergent)
    return c


def _surrogate_block_newton(Xk, sk, mu, r, active, inner_tol, inner_max):
    """Minimize -sk^T d + sum_i (mu_i / r_i) exp(r_i (Xk d)_i) over rows with
    block mass; returns (d, healthy)."""
    g = len(sk)
    if sp.issparse(Xk):
        Xa = Xk[np.nonzero(active)[0], :]
        dense = Xa.toarray()
    else:
        dense = Xk[active, :]
    mua = mu[active]
    ra = r[active]
    base = mua / ra
    d = np.zeros(g)
    z = np.zeros(len(mua))
    f = float(base.sum())
    f0 = f
    scale = inner_tol * (1.0 + float(np.abs(sk).max(initial=0.0)) + f0)
    converged = False
    for _ in range(inner_max):
        w = mua * np.exp(ra * z)
        gk = -sk + dense.T @ w
        if float(np.max(np.abs(gk))) <= scale:
            converged = True
            break
        H = dense.T @ ((w * ra)[:, None] * dense)
        step = _solve_psd(H, gk)
        direction = -step
        gd = float(gk @ direction)
        t = 1.0
        accepted = False
        for _ in range(30):
            z_try = z + t * (dense @ direction)
            with np.errstate(over="ignore"):
                f_try = -float(sk @ (d + t * direction)) + float((base * np.exp(ra * z_try)).sum())
            if np.isfinite(f_try) and f_try <= f + 1e-4 * t * gd:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        d = d + t * direction
        z = z_try
        f = f_try
    if converged:
        return d, True
    # fallback mandated for a stalled subproblem: halve, retry once, then flag
    d_half = 0.5 * d
    with np.errstate(over="ignore"):
        f_half = -float(sk @ d_half) + float((base * np.exp(ra * (dense @ d_half))).sum())
    if np.isfinite(f_half) and f_half <= f0:
        return d_half, True
    return np.zeros(g), False


def _mm_fit(inst: ProblemInstance, cfg: SolverConfig, variant: str) -> FitResult:
    X = inst.design
    p = X.n_cols
    beta = _init_beta(cfg, p)
    c = Coefficients.from_beta(inst, beta)
    divergent: set[int] = set()
    flags: dict = {}
    nnz = _nnz(X)
    N = X.n_rows
    s = inst.suff_stats
    if variant == "mm-parallel":
        blocks = _auto_blocks(p, cfg.block_sizes, what="mm-parallel")

    def step():
        if variant == "mm-binary":
            mm_binary_step(inst, c, cfg.clamp, divergent)
        elif variant == "gis":
            gis_step(inst, c, cfg.clamp, divergent)
        elif variant == "mm-general":
            mm_general_step(inst, c, cfg.clamp, divergent)
        else:
            mm_parallel_step(inst, c, blocks, cfg.clamp, divergent,
                             cfg.inner_tol, cfg.inner_max_iters, flags)

    def objective() -> float:
        return -float(s @ c.beta) + float(c.mu.sum())

    def grad_norm() -> float:
        return float(np.max(np.abs(X.rmatvec(c.mu) - s)))

    run = _Run(cfg)
    if run.start(objective(), grad_norm(), _est_error(c.beta, inst.beta_true)):
        return _finish(variant, inst, c.beta, c.mu, run, divergent)
    it = 0
    per_iter = 4.0 * nnz + 4.0 * N if variant != "mm-general" else 4.0 * N * p + 4.0 * N
    while True:
        before = c.beta.copy()
        step()
        it += 1
        run.work += per_iter
        if np.array_equal(c.beta, before):
            # exact fixed point of the synchronized update map
            run.record(it, objective(), grad_norm(), _est_error(c.beta, inst.beta_true))
            if not run.trace.termination:
                run.trace.termination = TOL_REACHED
            break
        if it % 64 == 0:
            c.resync(inst)
        if run.at_cadence(it):
            run.work += nnz + p
            if run.record(it, objective(), grad_norm(), _est_error(c.beta, inst.beta_true)):
                break
        elif run.out_of_time():
            run.record(it, objective(), grad_norm(), _est_error(c.beta, inst.beta_true))
            break
    res = _finish(variant, inst, c.beta, c.mu, run, divergent)
    res.flags.update(flags)
    return res


def mm_binary_fit(inst, cfg=None):
    return _mm_fit(inst, cfg or SolverConfig(variant="mm-binary"), "mm-binary")


def gis_fit(inst, cfg=None):
    return _mm_fit(inst, cfg or SolverConfig(variant="gis"), "gis")


def mm_general_fit(inst, cfg=None):
    return _mm_fit(inst, cfg or SolverConfig(variant="mm-general"), "mm-general")


def mm_parallel_fit(inst, cfg=None):
    return _mm_fit(inst, cfg or SolverConfig(variant="mm-parallel"), "mm-parallel")


# ---------------------------------------------------------------------------
# Intercept-profiled scaling (one 1-D solve per coordinate)
# ---------------------------------------------------------------------------


def solve_scaling_equation(coef: np.ndarray, expo: np.ndarray, rhs: float,
                           scale: float, bound: float, rel_tol: float = 1e-12,
                           max_iter: int = 200) -> tuple[float, bool, int]:
    """Root of scale * sum(coef * exp(expo * d)) = rhs over d.

    coef > 0 and expo > 0 make the left side strictly increasing, so the
    root is unique when it exists.  A geometric bracket is grown from
    [-1, 1] until the residual changes sign, then safeguarded Newton with
    bisection fallback runs to |residual| <= rel_tol * rhs.  Returns
    (d, clamped, n_evals); d is pinned to +-bound when the root escapes.
    """
    if rhs <= 0.0:
        return -bound, True, 0
    evals = 0

    def f(d: float) -> float:
        nonlocal evals
        evals += 1
        with np.errstate(over="ignore"):
            return scale * float((coef * np.exp(expo * d)).sum()) - rhs

    lo, hi = -1.0, 1.0
    fhi = f(hi)
    while fhi < 0.0:
        lo = hi
        hi *= 2.0
        if hi >= bound:
            hi = bound
            fhi = f(hi)
            if fhi < 0.0:
                return bound, True, evals
            break
        fhi = f(hi)
    flo = f(lo)
    while flo > 0.0:
        hi = lo
        lo *= 2.0
        if lo <= -bound:
            lo = -bound
            flo = f(lo)
            if flo > 0.0:
                return -bound, True, evals
            break
        flo = f(lo)
    d = 0.5 * (lo + hi)
    tol = rel_tol * rhs
    for _ in range(max_iter):
        with np.errstate(over="ignore"):
            ed = np.exp(expo * d)
            fd = scale * float((coef * ed).sum()) - rhs
            fp = scale * float((coef * expo * ed).sum())
        evals += 1
        if abs(fd) <= tol:
            return d, False, evals
        if fd > 0.0:
            hi = d
        else:
            lo = d
        if fp > 0.0 and np.isfinite(fp):
            d_new = d - fd / fp
        else:
            d_new = 0.5 * (lo + hi)
        if not (lo < d_new < hi):
            d_new = 0.5 * (lo + hi)
        d = d_new
    return d, False, evals


def iis_fit(inst: ProblemInstance, cfg: SolverConfig | None = None) -> FitResult:
    """Profiled-intercept scaling for non-negative slope designs.

    Each iteration solves, for every slope coordinate, the monotone 1-D
    equation matching the column's scaled statistic, then rescales the
    slope mean for all coordinates at once; the intercept is recovered in
    closed form at the end.
    """
    cfg = cfg or SolverConfig(variant="iis")
    X = inst.design
    if not X.has_intercept:
        raise SolverError("iis needs an intercept as design column 0")
    if X.kind == KIND_GENERAL:
        raise SolverError("iis requires a non-negative design")
    p = X.n_cols
    slope = _init_slope(cfg, p)
    total = inst.total_count
    s_slope = inst.suff_stats[1:]
    rowsum = X.slope_row_sums()
    mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
    supports = [X.col_support(j) if X.csc is not None else None for j in range(1, p)]
    cols_dense = None if X.csc is not None else [X.dense[:, j] for j in range(1, p)]
    divergent: set[int] = set()
    nnz = _nnz(X)

    def completed_beta() -> np.ndarray:
        b0 = np.log(total) - np.log(float(mu_ring.sum()))
        return np.concatenate(([b0], slope))

    def objective() -> float:
        # l at the profiled-optimal intercept (monotone alongside the slope
        # objective); differs from it by a data-only constant
        Lval = -float(s_slope @ slope) + total * np.log(float(mu_ring.sum()))
        return Lval + total * (1.0 - np.log(total))

    def grad_norm() -> float:
        g = -s_slope + (total / float(mu_ring.sum())) * X.slope_rmatvec(mu_ring)
        return float(np.max(np.abs(g)))

    run = _Run(cfg)
    if run.start(objective(), grad_norm(), _est_error(completed_beta(), inst.beta_true)):
        beta = completed_beta()
        mu = total * mu_ring / float(mu_ring.sum())
        return _finish("iis", inst, beta, mu, run, divergent)
    it = 0
    while True:
        S = float(mu_ring.sum())
        k = total / S
        delta = np.zeros(p - 1)
        for j in range(p - 1):
            if supports[j] is not None:
                rows = supports[j]
                coef = mu_ring[rows]
                expo = rowsum[rows]
            else:
                colv = cols_dense[j]
                rows = np.nonzero(colv)[0]
                coef = colv[rows] * mu_ring[rows]
                expo = rowsum[rows]
            d, clamped, evals = solve_scaling_equation(
                coef, expo, float(s_slope[j]), k, cfg.clamp, rel_tol=1e-12)
            run.work += 2.0 * evals * len(rows)
            if clamped:
                divergent.add(j + 1)
            delta[j] = d
        new_slope = np.clip(slope + delta, -cfg.clamp, cfg.clamp)
        actual = new_slope - slope
        with np.errstate(over="ignore"):
            mu_ring *= np.exp(X.slope_matvec(actual))
        slope[:] = new_slope
        it += 1
        run.work += nnz
        if it % 64 == 0:
            mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
        if run.at_cadence(it):
            run.work += nnz + p
            if run.record(it, objective(), grad_norm(), _est_error(completed_beta(), inst.beta_true)):
                break
        elif run.out_of_time():
            run.record(it, objective(), grad_norm(), _est_error(completed_beta(), inst.beta_true))
            break
    beta = completed_beta()
    mu = total * mu_ring / float(mu_ring.sum())
    return _finish("iis", inst, beta, mu, run, divergent)


def profiled_scaling_sequence(inst: ProblemInstance, n_iters: int,
                              slope0: np.ndarray | None = None) -> list[np.ndarray]:
    """Slope iterates of the profiled-objective scaling recursion.

    Keeps the un-normalized slope mean q o exp(Xs slope) and solves
    (total/<1,mu>) * sum_i x_ij mu_i exp(rowsum_i d) = <x_j, n> per
    coordinate.  Used by the equivalence test against the normalized form.
    """
    X = inst.design
    slope = np.zeros(X.n_cols - 1) if slope0 is None else np.asarray(slope0, dtype=float).copy()
    mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
    total = inst.total_count
    s_slope = inst.suff_stats[1:]
    rowsum = X.slope_row_sums()
    out = [slope.copy()]
    for _ in range(n_iters):
        k = total / float(mu_ring.sum())
        delta = np.zeros(X.n_cols - 1)
        for j in range(X.n_cols - 1):
            colv = X.col_dense(j + 1)
            rows = np.nonzero(colv)[0]
            coef = colv[rows] * mu_ring[rows]
            d, _, _ = solve_scaling_equation(coef, rowsum[rows], float(s_slope[j]), k, 1e6)
            delta[j] = d
        slope = slope + delta
        mu_ring = mu_ring * np.exp(X.slope_matvec(delta))
        out.append(slope.copy())
    return out


def normalized_scaling_sequence(inst: ProblemInstance, n_iters: int,
                                slope0: np.ndarray | None = None) -> list[np.ndarray]:
    """Slope iterates of the normalized-counts scaling recursion.

    Works with count and mean vectors normalized to total mass one and
    renormalizes the mean after every step; the 1-D roots are found with
    scipy's brentq so the route stays independent of the profiled form.
    """
    from scipy.optimize import brentq

    X = inst.design
    slope = np.zeros(X.n_cols - 1) if slope0 is None else np.asarray(slope0, dtype=float).copy()
    total = inst.total_count
    nbar_stats = inst.suff_stats[1:] / total
    mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
    mu_bar = mu_ring / float(mu_ring.sum())
    rowsum = X.slope_row_sums()
    out = [slope.copy()]
    for _ in range(n_iters):
        delta = np.zeros(X.n_cols - 1)
        for j in range(X.n_cols - 1):
            colv = X.col_dense(j + 1)
            rows = np.nonzero(colv)[0]
            coef = colv[rows] * mu_bar[rows]
            expo = rowsum[rows]
            rhs = float(nbar_stats[j])

            def f(d):
                return float((coef * np.exp(expo * d)).sum()) - rhs

            lo, hi = -1.0, 1.0
            while f(hi) < 0:
                lo, hi = hi, hi * 2
            while f(lo) > 0:
                hi, lo = lo, lo * 2
            delta[j] = brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16)
        slope = slope + delta
        scaled = mu_bar * np.exp(X.slope_matvec(delta))
        mu_bar = scaled / float(scaled.sum())
        out.append(slope.copy())
    return out


# ---------------------------------------------------------------------------
# Quadratic-bound solver with momentum (plain and ridge)
# ---------------------------------------------------------------------------


def _solve_psd(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve H d = g for symmetric PSD H, escalating a ridge on failure."""
    p = H.shape[0]
    base = float(np.trace(H)) / p if p else 1.0
    if not np.isfinite(base) or base <= 0.0:
        base = 1.0
    damp = 0.0
    for _ in range(14):
        try:
            cf = scipy.linalg.cho_factor(
                H + damp * np.eye(p) if damp else H, lower=True, check_finite=False)
            return scipy.linalg.cho_solve(cf, g, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            damp = base * 1e-10 if damp == 0.0 else damp * 10.0
    return np.linalg.lstsq(H, g, rcond=None)[0]


class _WOperator:
    """Curvature-bound matrix with a reusable factorization (+ ridge repair).

    The sharper fixed bound provably dominates the profiled curvature
    whenever the total count is at least the number of rows; below that it
    is checked by sampling and replaced by the spectral bound on failure.
    """

    def __init__(self, inst: ProblemInstance, w_choice: str, lam: float):
        self.repaired = False
        self.fell_back = False
        p1 = inst.n_cols - 1
        if w_choice == "bohning" and inst.total_count < inst.n_rows:
            worst = mdl.validate_curvature_bound(
                inst, mdl.bohning_bound(inst), n_weights=50, n_vectors=10, seed=0)
            if worst < -1e-9:
                w_choice = "spectral"
                self.fell_back = True
        if w_choice == "spectral":
            self.scalar = mdl.spectral_bound(inst) + lam
            self.matrix = None
            if self.scalar <= 0.0:
                raise SolverError("spectral curvature bound is not positive")
            return
        W = mdl.bohning_bound(inst)
        if lam > 0.0:
            W = W + lam * np.eye(p1)
        self.scalar = None
        self.matrix = W
        ridge = 1e-10 * float(np.trace(W)) / max(p1, 1)
        if not np.isfinite(ridge) or ridge <= 0.0:
            ridge = 1e-12
        for attempt in range(12):
            try:
                self.cf = scipy.linalg.cho_factor(W, lower=True, check_finite=False)
                return
            except (np.linalg.LinAlgError, ValueError):
                W = W + ridge * np.eye(p1)
                ridge *= 10.0
                self.repaired = True
                self.matrix = W
        raise SolverError("curvature bound matrix could not be factorized")

    def solve(self, g: np.ndarray) -> np.ndarray:
        if self.scalar is not None:
            return g / self.scalar
        return scipy.linalg.cho_solve(self.cf, g, check_finite=False)


def qips_fit(inst: ProblemInstance, cfg: SolverConfig | None = None) -> FitResult:
    """Momentum-accelerated fixed-quadratic-bound solver on the profiled
    objective; the ridge-q-ips variant penalizes the slopes with lam/2 ||.||^2.
    """
    cfg = cfg or SolverConfig(variant="q-ips")
    X = inst.design
    if not X.has_intercept:
        raise SolverError("q-ips needs an intercept as design column 0")
    ridge = cfg.variant == "ridge-q-ips"
    lam = cfg.lam if ridge else 0.0
    p = X.n_cols
    total = inst.total_count
    s_slope = inst.suff_stats[1:]
    B = cfg.clamp
    slope = _init_slope(cfg, p)
    eta_aux = slope.copy()
    theta = 1.0
    mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
    W = _WOperator(inst, cfg.w_choice, lam)
    nnz = _nnz(X)
    N = X.n_rows
    divergent: set[int] = set()
    restarts = 0
    bad_streak = 0

    def completed_beta() -> np.ndarray:
        b0 = np.log(total) - np.log(float(mu_ring.sum()))
        return np.concatenate(([b0], slope))

    def objective() -> float:
        val = -float(s_slope @ slope) + total * np.log(float(mu_ring.sum())) \
            + total * (1.0 - np.log(total))
        if lam > 0.0:
            val += 0.5 * lam * float(slope @ slope)
        return val

    def grad_at_state() -> np.ndarray:
        g = -s_slope + (total / float(mu_ring.sum())) * X.slope_rmatvec(mu_ring)
        if lam > 0.0:
            g = g + lam * slope
        return g

    run = _Run(cfg)
    run.work += float(N) * (p - 1) ** 2 if cfg.w_choice == "bohning" else float(N) * (p - 1)
    if run.start(objective(), float(np.max(np.abs(grad_at_state()))),
                 _est_error(completed_beta(), inst.beta_true)):
        mu = total * mu_ring / float(mu_ring.sum())
        return _finish(cfg.variant, inst, completed_beta(), mu, run, divergent)
    prev_obj = run.trace.records[0].objective
    it = 0
    while True:
        alpha = (1.0 - theta) * slope + theta * eta_aux
        w, _ = mdl._log_offset_weights(inst, alpha)
        g_alpha = -s_slope + total * X.slope_rmatvec(w)
        if lam > 0.0:
            g_alpha = g_alpha + lam * alpha
        eta_new = eta_aux - W.solve(g_alpha) / theta
        np.clip(eta_new, -B, B, out=eta_new)
        slope_new = (1.0 - theta) * slope + theta * eta_new
        clipped = np.clip(slope_new, -B, B)
        if not np.array_equal(clipped, slope_new):
            divergent.update(int(j) + 1 for j in np.nonzero(clipped != slope_new)[0])
            slope_new = clipped
        d = slope_new - slope
        with np.errstate(over="ignore"):
            mu_ring *= np.exp(X.slope_matvec(d))
        slope = slope_new
        eta_aux = eta_new
        theta = 0.5 * (np.sqrt(theta**4 + 4.0 * theta**2) - theta**2)
        it += 1
        run.work += 3.0 * nnz + 6.0 * N + (float((p - 1) ** 2) if W.matrix is not None else float(p))
        obj = objective()
        if obj > prev_obj + 1e-6 * (1.0 + abs(prev_obj)):
            bad_streak += 1
            if bad_streak >= 5:
                theta = 1.0
                eta_aux = slope.copy()
                restarts += 1
                bad_streak = 0
        else:
            bad_streak = 0
        prev_obj = obj
        if it % 64 == 0:
            mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
        if run.at_cadence(it):
            run.work += nnz + p
            if run.record(it, obj, float(np.max(np.abs(grad_at_state()))),
                          _est_error(completed_beta(), inst.beta_true)):
                break
        elif run.out_of_time():
            run.record(it, obj, float(np.max(np.abs(grad_at_state()))),
                       _est_error(completed_beta(), inst.beta_true))
            break
    mu = total * mu_ring / float(mu_ring.sum())
    res = _finish(cfg.variant, inst, completed_beta(), mu, run, divergent)
    res.flags["momentum_restarts"] = restarts
    res.flags["w_ridge_repaired"] = W.repaired
    res.flags["w_fell_back_to_spectral"] = W.fell_back
    return res


def momentum_sequence(n: int, theta0: float = 1.0) -> np.ndarray:
    """First n+1 momentum factors theta_t of the acceleration recursion."""
    out = np.empty(n + 1)
    th = theta0
    out[0] = th
    for t in range(1, n + 1):
        th = 0.5 * (np.sqrt(th**4 + 4.0 * th**2) - th**2)
        out[t] = th
    return out


# ---------------------------------------------------------------------------
# Randomized block coordinate descent on the profiled objective
# ---------------------------------------------------------------------------


def _block_newton_profiled(Xk, sk, mu_ring, total, inner_tol, inner_max):
    """Newton minimization of the profiled objective in one slope block.

    Objective in the block step d:  -sk^T d + total * log <1, mu o exp(Xk d)>.
    Keeps the block submatrix sparse when it is; returns
    (d, mu_new, work, line_search_failed).
    """
    g = len(sk)
    sparse_k = sp.issparse(Xk)
    N = Xk.shape[0]
    block_nnz = float(Xk.nnz) if sparse_k else float(N * g)
    d = np.zeros(g)
    mu_loc = mu_ring.copy()
    S = float(mu_loc.sum())
    f = total * np.log(S)
    scale = inner_tol * (1.0 + total)
    work = 0.0
    failed = False
    for _ in range(inner_max):
        u = Xk.T @ mu_loc
        gk = -sk + total * (u / S)
        work += 2.0 * block_nnz
        if float(np.max(np.abs(gk))) <= scale:
            break
        w = mu_loc / S
        if sparse_k:
            A = (Xk.T @ Xk.multiply(w[:, None])).toarray()
        else:
            A = Xk.T @ (w[:, None] * Xk)
        H = total * (A - np.outer(u / S, u / S))
        work += block_nnz * g + g**3 / 3.0
        step = _solve_psd(H, gk)
        direction = -step
        gd = float(gk @ direction)
        t = 1.0
        accepted = False
        for _ in range(30):
            z = Xk @ (t * direction)
            with np.errstate(over="ignore"):
                mu_try = mu_loc * np.exp(z)
            S_try = float(mu_try.sum())
            work += 2.0 * block_nnz + N
            if np.isfinite(S_try) and S_try > 0.0:
                f_try = -float(sk @ (d + t * direction)) + total * np.log(S_try)
                if f_try <= f + 1e-4 * t * gd:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            failed = True
            break
        d = d + t * direction
        mu_loc = mu_try
        S = S_try
        f = f_try
    return d, mu_loc, work, failed


def bips_fit(inst: ProblemInstance, cfg: SolverConfig | None = None) -> FitResult:
    """Random blocking followed by cyclic block-Newton updates of the
    profiled objective; the intercept is recovered in closed form at the end.
    """
    cfg = cfg or SolverConfig(variant="b-ips")
    X = inst.design
    if not X.has_intercept:
        raise SolverError("b-ips needs an intercept as design column 0")
    p = X.n_cols
    total = inst.total_count
    s_slope = inst.suff_stats[1:]
    slope = _init_slope(cfg, p)
    mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
    blocks_template = _auto_blocks(p - 1, cfg.block_sizes, what="b-ips")
    sizes = [len(b) for b in blocks_template]
    rng = _rng(cfg.seed)
    divergent: set[int] = set()
    ls_failures = 0
    block_objectives: list[float] = []
    nnz = _nnz(X)

    def completed_beta() -> np.ndarray:
        b0 = np.log(total) - np.log(float(mu_ring.sum()))
        return np.concatenate(([b0], slope))

    def objective() -> float:
        return -float(s_slope @ slope) + total * np.log(float(mu_ring.sum())) \
            + total * (1.0 - np.log(total))

    def grad_norm() -> float:
        g = -s_slope + (total / float(mu_ring.sum())) * X.slope_rmatvec(mu_ring)
        return float(np.max(np.abs(g)))

    run = _Run(cfg)
    if run.start(objective(), grad_norm(), _est_error(completed_beta(), inst.beta_true)):
        mu = total * mu_ring / float(mu_ring.sum())
        return _finish("b-ips", inst, completed_beta(), mu, run, divergent)
    it = 0
    while True:
        perm = rng.permutation(p - 1)
        off = 0
        for gsize in sizes:
            cols = perm[off:off + gsize]
            off += gsize
            Xk = X.submatrix(cols + 1)
            d, mu_new, work, failed = _block_newton_profiled(
                Xk, s_slope[cols], mu_ring, total, cfg.inner_tol, cfg.inner_max_iters)
            run.work += work
            if failed:
                ls_failures += 1
            new_vals = np.clip(slope[cols] + d, -cfg.clamp, cfg.clamp)
            if not np.array_equal(new_vals, slope[cols] + d):
                hit = np.nonzero(new_vals != slope[cols] + d)[0]
                divergent.update(int(cols[h]) + 1 for h in hit)
                extra = new_vals - slope[cols] - d
                with np.errstate(over="ignore"):
                    mu_new = mu_new * np.exp(Xk @ extra)
            slope[cols] = new_vals
            mu_ring = mu_new
            if cfg.track_block_objective:
                block_objectives.append(objective())
        it += 1
        if it % 64 == 0:
            mu_ring = inst.offset * np.exp(X.slope_matvec(slope))
        if run.at_cadence(it):
            run.work += nnz + p
            if run.record(it, objective(), grad_norm(), _est_error(completed_beta(), inst.beta_true)):
                break
        elif run.out_of_time():
            run.record(it, objective(), grad_norm(), _est_error(completed_beta(), inst.beta_true))
            break
    mu = total * mu_ring / float(mu_ring.sum())
    res = _finish("b-ips", inst, completed_beta(), mu, run, divergent)
    res.flags["line_search_failures"] = ls_failures
    if cfg.track_block_objective:
        res.diagnostics["block_objectives"] = np.array(block_objectives)
    return res


# ---------------------------------------------------------------------------
# Dense Newton baseline
# ---------------------------------------------------------------------------

NEWTON_MAX_P = 5000


def newton_fit(inst: ProblemInstance, cfg: SolverConfig | None = None) -> FitResult:
    """Full-Hessian Newton with Armijo backtracking on the raw objective.

    Serves as the accuracy oracle for the scaling variants; guarded to
    p <= 5000 where a dense factorization is reasonable.
    """
    cfg = cfg or SolverConfig(variant="newton")
    X = inst.design
    p = X.n_cols
    if p > NEWTON_MAX_P:
        raise SolverError(f"newton baseline is limited to p <= {NEWTON_MAX_P}")
    s = inst.suff_stats
    beta = _init_beta(cfg, p)
    c = Coefficients.from_beta(inst, beta)
    N = X.n_rows
    nnz = _nnz(X)
    divergent: set[int] = set()

    def objective() -> float:
        return mdl.neg_log_likelihood(inst, c)

    def grad() -> np.ndarray:
        return X.rmatvec(c.mu) - s

    run = _Run(cfg)
    g = grad()
    if run.start(objective(), float(np.max(np.abs(g))), _est_error(c.beta, inst.beta_true)):
        return _finish("newton", inst, c.beta, c.mu, run, divergent)
    it = 0
    f = run.trace.records[0].objective
    while True:
        H = X.weighted_gram(c.mu)
        step = _solve_psd(H, g)
        direction = -step
        gd = float(g @ direction)
        if gd > 0.0:
            direction = -g
            gd = float(g @ direction)
        t = 1.0
        accepted = False
        for _ in range(50):
            trial = np.clip(c.beta + t * direction, -cfg.clamp, cfg.clamp)
            c_try = Coefficients.from_beta(inst, trial)
            f_try = mdl.neg_log_likelihood(inst, c_try)
            if np.isfinite(f_try) and f_try <= f + 1e-4 * t * gd:
                accepted = True
                break
            t *= 0.5
        run.work += float(N) * p * p + p**3 / 3.0
        if accepted:
            if np.any(np.abs(trial) >= cfg.clamp):
                divergent.update(int(j) for j in np.nonzero(np.abs(trial) >= cfg.clamp)[0])
            c = c_try
            f = f_try
        it += 1
        g = grad()
        run.work += nnz + p
        if run.record(it, f, float(np.max(np.abs(g))), _est_error(c.beta, inst.beta_true)):
            break
        if not accepted:
            run.trace.termination = DIVERGED
            break
    return _finish("newton", inst, c.beta, c.mu, run, divergent)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

_FITTERS = {
    "ips": ips_fit,
    "a-ips": a_ips_fit,
    "x2-ips": x2_ips_fit,
    "mm-binary": mm_binary_fit,
    "gis": gis_fit,
    "mm-general": mm_general_fit,
    "mm-parallel": mm_parallel_fit,
    "iis": iis_fit,
    "q-ips": qips_fit,
    "ridge-q-ips": qips_fit,
    "b-ips": bips_fit,
    "newton": newton_fit,
    "l1-ips": l1_ips_fit,
}


def solve(inst: ProblemInstance, cfg: SolverConfig) -> FitResult:
    """Run the variant selected by the config."""
    return _FITTERS[cfg.variant](inst, cfg)
