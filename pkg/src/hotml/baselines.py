"""Reference detectors: zero-forcing, convex box relaxation and exhaustive ML."""
from __future__ import annotations

import numba
import numpy as np

from .errors import OracleTooLargeError
from .model import DetectionInstance, sign
from .numerics import OpCounter, log_phi_scalar
from .objective import ObjectiveContext
from .solver import SolverConfig, gemm_solve

MAX_EXHAUSTIVE_N = 24
ZF_RIDGE = 1e-8


def zf_detect(inst: DetectionInstance, counter: OpCounter | None = None, diagnostics: dict | None = None) -> np.ndarray:
    """sign(H^+ y); falls back to a tiny ridge when H is column-rank deficient."""
    H = np.asarray(inst.H, dtype=np.float64)
    y = np.asarray(inst.y, dtype=np.float64)
    M, N = H.shape
    s = np.linalg.svd(H, compute_uv=False)
    tol = s.max(initial=0.0) * max(M, N) * np.finfo(float).eps
    if s.size < N or s.min() <= tol:
        ridge = ZF_RIDGE * (s.max(initial=0.0) ** 2 or 1.0)
        x = np.linalg.solve(H.T @ H + ridge * np.eye(N), H.T @ y)
        if diagnostics is not None:
            diagnostics["zf_regularized"] = True
    else:
        x = np.linalg.lstsq(H, y, rcond=None)[0]
    if counter is not None:
        # QR-based least squares
        counter.count("flops", 2 * M * N * N - (2 * N**3) // 3 + 4 * M * N + N * N)
    return sign(x)


def box_relax_solve(ctx: ObjectiveContext, cfg: SolverConfig, counter: OpCounter | None = None) -> np.ndarray:
    """Minimizer of f over the box (lambda = 0), before rounding."""
    return gemm_solve(ctx, 0.0, np.zeros(ctx.N), cfg, counter).x


def box_relax_detect(ctx: ObjectiveContext, cfg: SolverConfig, counter: OpCounter | None = None) -> np.ndarray:
    return sign(box_relax_solve(ctx, cfg, counter))


@numba.njit(cache=True)
def _lex_less(a, b):
    for j in range(a.shape[0]):
        if a[j] != b[j]:
            return a[j] < b[j]
    return False


@numba.njit(cache=True)
def _gray_onebit(G, best):
    M, N = G.shape
    x = -np.ones(N)
    t = np.zeros(M)
    for i in range(M):
        for j in range(N):
            t[i] -= G[i, j]
    fbest = 0.0
    for i in range(M):
        fbest -= log_phi_scalar(t[i])
    best[:] = x
    for k in range(1, 1 << N):
        j = 0
        while not (k >> j) & 1:
            j += 1
        d = -2.0 * x[j]
        x[j] = -x[j]
        for i in range(M):
            t[i] += d * G[i, j]
        if (k & 0x3FF) == 0:
            for i in range(M):
                acc = 0.0
                for jj in range(N):
                    acc += G[i, jj] * x[jj]
                t[i] = acc
        fv = 0.0
        for i in range(M):
            fv -= log_phi_scalar(t[i])
        if fv < fbest or (fv == fbest and _lex_less(x, best)):
            fbest = fv
            best[:] = x
    return fbest


@numba.njit(cache=True)
def _gray_classical(A, b, y_sq, best):
    N = b.shape[0]
    x = -np.ones(N)
    r = np.empty(N)   # A x - b
    for i in range(N):
        acc = 0.0
        for j in range(N):
            acc += A[i, j] * x[j]
        r[i] = acc - b[i]
    fv = 0.0
    for i in range(N):
        fv += 0.5 * x[i] * (r[i] - b[i])
    fv += 0.5 * y_sq
    fbest = fv
    best[:] = x
    for k in range(1, 1 << N):
        j = 0
        while not (k >> j) & 1:
            j += 1
        d = -2.0 * x[j]
        fv += d * r[j] + 0.5 * d * d * A[j, j]
        x[j] = -x[j]
        for i in range(N):
            r[i] += d * A[i, j]
        if fv < fbest or (fv == fbest and _lex_less(x, best)):
            fbest = fv
            best[:] = x
    return fbest


def exhaustive_ml(ctx: ObjectiveContext, counter: OpCounter | None = None) -> tuple[np.ndarray, float]:
    """Global minimizer of f over {-1, 1}^N by Gray-code enumeration.

    Ties go to the lexicographically smallest vector (-1 before +1).
    """
    N = ctx.N
    if N > MAX_EXHAUSTIVE_N:
        raise OracleTooLargeError(f"exhaustive search refuses N = {N} > {MAX_EXHAUSTIVE_N}")
    best = np.empty(N)
    if ctx.one_bit:
        fstar = _gray_onebit(ctx.G, best)
        if counter is not None:
            counter.count("phi", ctx.M << N)
            counter.count("flops", (4 * ctx.M) << N)
    else:
        fstar = _gray_classical(ctx.HtH, ctx.Hty, ctx.y_sq, best)
        if counter is not None:
            counter.count("flops", (2 * N + 8) << N)
    return best, float(fstar)
