"""
GEMM inner solver, homotopy outer loop and brute-force dual evaluation.

GEMM step (descent form)::

    z^t     = x^t + alpha_t (x^t - x^{t-1})
    x^{t+1} = Pi(z^t - beta_t grad G_lambda(z^t | x^t))

with FISTA extrapolation and, for one-bit, a backtracking search on beta_t.
Because the majorant differs from f only by a linear term, its sufficient
descent test reduces to ``f(x+) <= f(z) + <grad f(z), x+ - z> + ||x+ - z||^2 / (2 beta)``.

The homotopy loop raises lambda either geometrically or by the dual
subgradient rule ``lambda_k = lambda_{k-1} + mu_k (N - ||x^{k-1}||^2)``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numba
import numpy as np

from .errors import NumericalError, OracleTooLargeError
from .model import Mode, sign
from .numerics import LOG_PHI_FLOPS, PSI_FLOPS, OpCounter, log_phi_scalar
from .objective import (ObjectiveContext, classical_f, classical_grad_f, lipschitz_bound, onebit_f,
                        onebit_grad_f)

# line-search acceptance slack, relative to |f|: a few ulps of rounding in the objective sum
EPS = float(np.finfo(np.float64).eps)


class Schedule(str, enum.Enum):
    SUBGRADIENT = "subgradient"
    GEOMETRIC = "geometric"


@dataclass(frozen=True)
class SolverConfig:
    lambda0: float = 0.01
    mu0: float = 0.1
    lambda_stop_tol: float = 1e-4
    inner_tol: float = 1e-4
    inner_max_iter: int = 300
    sigma0: float = 0.5
    schedule: Schedule = Schedule.SUBGRADIENT
    c: float = 2.0
    max_outer_iter: int = 1000
    beta_init: float = 1.0
    shrink: float = 0.5
    max_trials: int = 30
    line_search: bool | None = None   # None: on for one-bit, off (beta = 1/||H||^2) for classical
    monotone: bool = True
    settle: bool = True   # solve P_lambda0 from the random start before the first lambda update

    @classmethod
    def for_mode(cls, mode: Mode, **overrides) -> "SolverConfig":
        if Mode(mode) == Mode.CLASSICAL:
            base = cls(mu0=1.0, inner_max_iter=100)
        else:
            base = cls()
        return replace(base, **overrides)

    def validate(self) -> None:
        positive = dict(mu0=self.mu0, lambda_stop_tol=self.lambda_stop_tol, inner_tol=self.inner_tol,
                        inner_max_iter=self.inner_max_iter, beta_init=self.beta_init, shrink=self.shrink,
                        max_trials=self.max_trials, max_outer_iter=self.max_outer_iter)
        for k, v in positive.items():
            if not v > 0:
                raise ValueError(f"{k} must be positive, got {v}")
        if self.lambda0 < 0 or self.sigma0 < 0:
            raise ValueError("lambda0 and sigma0 must be non-negative")
        if not self.shrink < 1:
            raise ValueError("shrink must be < 1")
        if Schedule(self.schedule) == Schedule.GEOMETRIC and not self.c > 1:
            raise ValueError("geometric schedule needs c > 1")


def project_box(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise NumericalError("NaN passed to box projection")
    return np.clip(x, -1.0, 1.0)


# ---------------------------------------------------------------- kernels

@numba.njit(cache=True)
def _f(one_bit, G, HtH, Hty, y_sq, x):
    if one_bit:
        return onebit_f(G, x)
    return classical_f(HtH, Hty, y_sq, x)


@numba.njit(cache=True)
def _grad(one_bit, G, HtH, Hty, x, out):
    if one_bit:
        onebit_grad_f(G, x, out)
    else:
        classical_grad_f(HtH, Hty, x, out)


@numba.njit(cache=True)
def _step(z, g, beta, xn):
    for j in range(z.shape[0]):
        v = z[j] - beta * g[j]
        if v > 1.0:
            v = 1.0
        elif v < -1.0:
            v = -1.0
        xn[j] = v


@numba.njit(cache=True)
def _gemm_kernel(one_bit, G, HtH, Hty, y_sq, lam, x, tol, max_iter, line_search, beta_init, beta_fixed,
                 shrink, max_trials, monotone, stats, trace_x, trace_p, trace_off):
    """Run GEMM in place on ``x``.

    stats[0..5] accumulate: iterations, grad evals, f evals, line-search
    trials, line-search failures, momentum restarts. stats[6] is set to 1
    if a NaN appears. Returns the number of trace rows written.
    """
    N = x.shape[0]
    x_prev = x.copy()
    z = np.empty(N)
    g = np.empty(N)
    gf = np.empty(N)
    xn = np.empty(N)
    xi = 1.0
    beta = beta_init
    n_trace = trace_x.shape[0]
    written = 0
    f_cur = 0.0
    if monotone:
        f_cur = _f(one_bit, G, HtH, Hty, y_sq, x)
        stats[2] += 1
    for t in range(max_iter):
        xi_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * xi * xi))
        alpha = (xi - 1.0) / xi_new
        xi = xi_new
        restarted = 0
        while True:
            for j in range(N):
                z[j] = x[j] + alpha * (x[j] - x_prev[j])
            _grad(one_bit, G, HtH, Hty, z, gf)
            stats[1] += 1
            for j in range(N):
                g[j] = gf[j] - 2.0 * lam * x[j]
            if line_search:
                fz = _f(one_bit, G, HtH, Hty, y_sq, z)
                stats[2] += 1
                if t > 0 or restarted:
                    beta = beta / shrink
                else:
                    beta = beta_init
                ok = False
                for _ in range(max_trials):
                    _step(z, g, beta, xn)
                    fx = _f(one_bit, G, HtH, Hty, y_sq, xn)
                    stats[2] += 1
                    stats[3] += 1
                    lin = 0.0
                    sq = 0.0
                    for j in range(N):
                        d = xn[j] - z[j]
                        lin += gf[j] * d
                        sq += d * d
                    if fx <= fz + lin + sq / (2.0 * beta) + 8.0 * EPS * abs(fz):
                        ok = True
                        break
                    beta = beta * shrink
                if not ok:
                    stats[4] += 1
                    beta = beta_fixed
                    _step(z, g, beta, xn)
                    fx = _f(one_bit, G, HtH, Hty, y_sq, xn)
                    stats[2] += 1
            else:
                beta = beta_fixed
                _step(z, g, beta, xn)
                fx = 0.0
                if monotone:
                    fx = _f(one_bit, G, HtH, Hty, y_sq, xn)
                    stats[2] += 1
            if monotone and alpha != 0.0:
                Fn = fx
                Fc = f_cur
                for j in range(N):
                    Fn -= lam * xn[j] * xn[j]
                    Fc -= lam * x[j] * x[j]
                if Fn > Fc:
                    # extrapolated step went uphill: restart momentum from x^t
                    alpha = 0.0
                    xi = 1.0
                    restarted = 1
                    stats[5] += 1
                    continue
            break
        if written < n_trace:
            for j in range(N):
                trace_x[written, j] = xn[j]
            trace_p[written, 0] = lam
            trace_p[written, 1] = alpha
            trace_p[written, 2] = beta
            trace_p[written, 3] = restarted
            written += 1
        diff = 0.0
        for j in range(N):
            if xn[j] != xn[j]:
                stats[6] = 1
                return trace_off + written
            d = xn[j] - x[j]
            diff += d * d
            x_prev[j] = x[j]
            x[j] = xn[j]
        f_cur = fx
        stats[0] += 1
        if math.sqrt(diff) <= tol:
            break
    return trace_off + written


@numba.njit(cache=True)
def _homotopy_kernel(one_bit, G, HtH, Hty, y_sq, x, lambda0, geometric, mu0, c, lambda_max, stop_tol,
                     max_outer, tol, max_iter, line_search, beta_init, beta_fixed, shrink, max_trials,
                     monotone, settle, stats, outer_trace, trace_x, trace_p):
    N = x.shape[0]
    lam = lambda0
    written = 0
    k = 0
    if settle:
        # the lambda update reads ||x^{k-1}||^2 as a proxy for the minimizer at lambda_{k-1},
        # so x^0 must be a stationary point at lambda0, not the raw random start
        written = _gemm_kernel(one_bit, G, HtH, Hty, y_sq, lambda0, x, tol, max_iter, line_search,
                               beta_init, beta_fixed, shrink, max_trials, monotone, stats, trace_x, trace_p, 0)
        if stats[6] != 0:
            return 0
    for k in range(1, max_outer + 1):
        nrm = 0.0
        for j in range(N):
            nrm += x[j] * x[j]
        if geometric:
            lam_new = lam * c
        else:
            lam_new = lam + (mu0 / k) * (N - nrm)
        before = stats[0]
        sub_x = trace_x[written:]
        sub_p = trace_p[written:]
        written = _gemm_kernel(one_bit, G, HtH, Hty, y_sq, lam_new, x, tol, max_iter, line_search,
                               beta_init, beta_fixed, shrink, max_trials, monotone, stats, sub_x, sub_p,
                               written)
        if stats[6] != 0:
            return k
        if k - 1 < outer_trace.shape[0]:
            nrm = 0.0
            for j in range(N):
                nrm += x[j] * x[j]
            outer_trace[k - 1, 0] = lam_new
            outer_trace[k - 1, 1] = nrm
            outer_trace[k - 1, 2] = _f(one_bit, G, HtH, Hty, y_sq, x) - lam_new * nrm
            outer_trace[k - 1, 3] = stats[0] - before
        delta = abs(lam_new - lam)
        lam = lam_new
        if geometric:
            if lam >= lambda_max:
                break
        elif delta <= stop_tol:
            break
    return k


# ---------------------------------------------------------------- wrappers

class GemmResult(NamedTuple):
    x: np.ndarray
    iters: int
    line_search_failures: int = 0
    restarts: int = 0
    trace: np.ndarray | None = None        # (T, N) iterates x^1..x^T
    step_params: np.ndarray | None = None  # (T, 4): lambda, alpha, beta, restarted


@dataclass
class HomotopyResult:
    x_hat: np.ndarray
    x_relaxed: np.ndarray
    trace: list[tuple[float, float, float, int]]
    outer_iters: int
    inner_iters: int
    line_search_failures: int = 0
    steps: np.ndarray | None = None
    step_params: np.ndarray | None = None

    def __iter__(self):
        # allows ``x_hat, trace = homotopy_solve(...)``
        return iter((self.x_hat, self.trace))

    def write_trace(self, path) -> None:
        """Outer-loop diagnostics as CSV: k, lambda, ||x||^2, F_lambda(x), inner iterations."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "lambda", "norm_sq", "penalized", "inner_iters"])
            w.writerows([k, repr(lam), repr(nrm), repr(F), n] for k, (lam, nrm, F, n) in enumerate(self.trace, 1))


def _common_args(ctx: ObjectiveContext, cfg: SolverConfig):
    one_bit = ctx.one_bit
    N = ctx.N
    G = ctx.G if one_bit else np.zeros((0, N))
    HtH = np.zeros((0, 0)) if one_bit else ctx.HtH
    Hty = np.zeros(0) if one_bit else ctx.Hty
    line_search = one_bit if cfg.line_search is None else bool(cfg.line_search)
    L = lipschitz_bound(ctx)
    beta_fixed = 1.0 / L if L > 0 else 1.0
    return one_bit, G, HtH, Hty, ctx.y_sq, line_search, beta_fixed


def _charge(ctx: ObjectiveContext, stats: np.ndarray, counter: OpCounter | None) -> None:
    if counter is None:
        return
    M, N = ctx.M, ctx.N
    iters, n_grad, n_f, trials = (int(s) for s in stats[:4])
    if ctx.one_bit:
        counter.count("phi", (n_grad + n_f) * M)
        grad_cost = 4 * M * N + PSI_FLOPS * M + 3 * N
        f_cost = 2 * M * N + (LOG_PHI_FLOPS + 1) * M
    else:
        grad_cost = 2 * N * N + 3 * N
        f_cost = 2 * N * N + 4 * N + 2
    step_cost = 3 * N
    check_cost = 5 * N + 5
    counter.count("flops", n_grad * grad_cost + n_f * f_cost + (trials + iters) * step_cost
                  + trials * check_cost + iters * 4 * N)


def _check_nan(stats: np.ndarray) -> None:
    if stats[6]:
        raise NumericalError("NaN encountered in solver iterate")


def gemm_solve(ctx: ObjectiveContext, lam: float, x0: np.ndarray, cfg: SolverConfig,
               counter: OpCounter | None = None, trace: int = 0) -> GemmResult:
    """Approximate stationary point of min_{x in box} f(x) - lam ||x||^2 from ``x0``.

    ``trace`` records the first ``trace`` iterates with their (lambda, alpha, beta, restart) values.
    """
    x = np.array(x0, dtype=np.float64)
    if x.shape != (ctx.N,):
        raise ValueError(f"x0 must have shape ({ctx.N},)")
    if np.isnan(x).any():
        raise NumericalError("NaN in starting point")
    if np.abs(x).max(initial=0.0) > 1.0:
        raise ValueError("x0 must lie in [-1, 1]^N")
    one_bit, G, HtH, Hty, y_sq, line_search, beta_fixed = _common_args(ctx, cfg)
    stats = np.zeros(7, dtype=np.int64)
    tx = np.zeros((trace, ctx.N))
    tp = np.zeros((trace, 4))
    n = _gemm_kernel(one_bit, G, HtH, Hty, y_sq, float(lam), x, cfg.inner_tol, cfg.inner_max_iter, line_search,
                     cfg.beta_init, beta_fixed, cfg.shrink, cfg.max_trials, cfg.monotone, stats, tx, tp, 0)
    _check_nan(stats)
    _charge(ctx, stats, counter)
    return GemmResult(x, int(stats[0]), int(stats[4]), int(stats[5]),
                      tx[:n] if trace else None, tp[:n] if trace else None)


def homotopy_solve(ctx: ObjectiveContext, cfg: SolverConfig, x0: np.ndarray | None = None,
                   rng: np.random.Generator | None = None, counter: OpCounter | None = None,
                   trace_steps: int = 0) -> HomotopyResult:
    """HOTML: trace the solution path of the penalized problem for increasing lambda.

    The relaxed end point is rounded by sign (sgn(0) = +1) so the result is
    always binary. ``trace_steps`` records the first inner GEMM iterates.
    """
    cfg.validate()
    if x0 is None:
        if rng is None:
            raise ValueError("need either x0 or rng")
        x0 = rng.uniform(-1.0, 1.0, size=ctx.N)
    x = np.array(x0, dtype=np.float64)
    one_bit, G, HtH, Hty, y_sq, line_search, beta_fixed = _common_args(ctx, cfg)
    stats = np.zeros(7, dtype=np.int64)
    outer = np.zeros((cfg.max_outer_iter, 4))
    tx = np.zeros((trace_steps, ctx.N))
    tp = np.zeros((trace_steps, 4))
    geometric = Schedule(cfg.schedule) == Schedule.GEOMETRIC
    k = _homotopy_kernel(one_bit, G, HtH, Hty, y_sq, x, cfg.lambda0, geometric, cfg.mu0, cfg.c,
                         lipschitz_bound(ctx), cfg.lambda_stop_tol, cfg.max_outer_iter, cfg.inner_tol,
                         cfg.inner_max_iter, line_search, cfg.beta_init, beta_fixed, cfg.shrink,
                         cfg.max_trials, cfg.monotone, cfg.settle, stats, outer, tx, tp)
    _check_nan(stats)
    _charge(ctx, stats, counter)
    rows = outer[:k]
    trace = [(float(r[0]), float(r[1]), float(r[2]), int(r[3])) for r in rows]
    n_steps = min(int(stats[0]), trace_steps)
    return HomotopyResult(sign(x), x, trace, int(k), int(stats[0]), int(stats[4]),
                          tx[:n_steps] if trace_steps else None, tp[:n_steps] if trace_steps else None)


# ---------------------------------------------------------------- duality oracles

MAX_GRID_POINTS = 2 * 10**8


@numba.njit(cache=True)
def _grid_envelope(one_bit, G, HtH, Hty, y_sq, N, R, fmin):
    """fmin[s] <- min f over grid points with sum of integer squares s.

    Grid value k maps to x = (2k - (R-1)) / (R-1); the squared norm of a grid
    point is s / (R-1)^2 with s an integer.
    """
    idx = np.zeros(N, dtype=np.int64)
    x = np.empty(N)
    h = R - 1
    for j in range(N):
        x[j] = -1.0
    M = G.shape[0]
    t = np.zeros(M)
    if one_bit:
        for i in range(M):
            for j in range(N):
                t[i] += G[i, j] * x[j]
    total = 1
    for j in range(N):
        total *= R
    for p in range(total):
        s = 0
        for j in range(N):
            q = 2 * idx[j] - h
            s += q * q
        if one_bit:
            fv = 0.0
            for i in range(M):
                fv -= log_phi_scalar(t[i])
        else:
            fv = classical_f(HtH, Hty, y_sq, x)
        if fv < fmin[s]:
            fmin[s] = fv
        # advance the mixed-radix counter and update G x incrementally
        j = N - 1
        while j >= 0:
            old = x[j]
            if idx[j] < h:
                idx[j] += 1
                x[j] = (2.0 * idx[j] - h) / h
                if one_bit:
                    for i in range(M):
                        t[i] += G[i, j] * (x[j] - old)
                break
            idx[j] = 0
            x[j] = -1.0
            if one_bit:
                for i in range(M):
                    t[i] += G[i, j] * (x[j] - old)
            j -= 1
        if one_bit and (p & 0xFFFF) == 0xFFFF:
            # resync against drift from incremental updates
            for i in range(M):
                acc = 0.0
                for jj in range(N):
                    acc += G[i, jj] * x[jj]
                t[i] = acc


class DualCurve:
    """Lower envelope of the Lagrangian over a dense box grid, reusable for many lambdas."""

    def __init__(self, ctx: ObjectiveContext, resolution: int = 81):
        N = ctx.N
        if N > 12 or float(resolution) ** N > MAX_GRID_POINTS:
            raise OracleTooLargeError(f"grid oracle refuses {resolution}^{N} points")
        if resolution < 2:
            raise ValueError("resolution must be >= 2")
        one_bit, G, HtH, Hty, y_sq, _, _ = _common_args(ctx, SolverConfig())
        h = resolution - 1
        fmin = np.full(N * h * h + 1, np.inf)
        _grid_envelope(one_bit, G, HtH, Hty, y_sq, N, resolution, fmin)
        keep = np.isfinite(fmin)
        self.N = N
        self.norms = np.nonzero(keep)[0] / float(h * h)
        self.fmin = fmin[keep]

    def __call__(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        vals = (self.fmin[None, :] - lam[:, None] * self.norms[None, :]).min(axis=1) + lam * self.N
        return vals if vals.size > 1 else float(vals[0])


def dual_value(ctx: ObjectiveContext, lam: float, oracle: str = "grid", resolution: int = 81) -> float:
    """d(lam) = min over the box of f(x) + lam (N - ||x||^2), by brute force.

    ``oracle="vertex"`` minimizes over {-1, 1}^N only, where the Lagrangian
    equals f; that is exact only once lam exceeds L_f / 2.
    """
    if oracle == "grid":
        return DualCurve(ctx, resolution)(lam)
    if oracle == "vertex":
        from .baselines import exhaustive_ml
        return exhaustive_ml(ctx)[1]
    raise ValueError(f"unknown oracle {oracle!r}")
