"""
ML objectives, the penalized objective F_lambda and its convex majorant.

One-bit:   f(x) = -sum_i log Phi(g_i^T x),  g_i = y_i h_i / sigma_hat
Classical: f(x) = 1/2 ||y - H x||^2

F_lambda(x) = f(x) - lambda ||x||^2 and, linearizing the concave penalty at
x_bar, G_lambda(x | x_bar) = f(x) - 2 lambda <x_bar, x - x_bar> - lambda ||x_bar||^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidInstanceError
from .model import DetectionInstance, Mode
from .numerics import LOG_PHI_FLOPS, PSI_FLOPS, OpCounter, log_phi_scalar, psi_scalar

SPEC_NORM_SAFETY = 1.001
POWER_MAX_ITER = 200
POWER_TOL = 1e-8


@numba.njit(cache=True)
def onebit_f(G, x):
    M, N = G.shape
    total = 0.0
    for i in range(M):
        t = 0.0
        for j in range(N):
            t += G[i, j] * x[j]
        total -= log_phi_scalar(t)
    return total


@numba.njit(cache=True)
def onebit_grad_f(G, x, out):
    """out <- grad f(x) = -G^T psi(G x)."""
    M, N = G.shape
    for j in range(N):
        out[j] = 0.0
    for i in range(M):
        t = 0.0
        for j in range(N):
            t += G[i, j] * x[j]
        u = psi_scalar(t)
        for j in range(N):
            out[j] -= u * G[i, j]


@numba.njit(cache=True)
def classical_f(HtH, Hty, y_sq, x):
    N = x.shape[0]
    q = 0.0
    lin = 0.0
    for i in range(N):
        s = 0.0
        for j in range(N):
            s += HtH[i, j] * x[j]
        q += x[i] * s
        lin += Hty[i] * x[i]
    return 0.5 * q - lin + 0.5 * y_sq


@numba.njit(cache=True)
def classical_grad_f(HtH, Hty, x, out):
    N = x.shape[0]
    for i in range(N):
        s = 0.0
        for j in range(N):
            s += HtH[i, j] * x[j]
        out[i] = s - Hty[i]


def spectral_norm_sq(A: np.ndarray) -> float:
    """Upper estimate of ||A||_2^2 by power iteration on A^T A, times the 1.001 safety factor."""
    A = np.asarray(A, dtype=np.float64)
    AtA = A.T @ A
    n = AtA.shape[0]
    v = np.random.default_rng(0x5eed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    converged = False
    for _ in range(POWER_MAX_ITER):
        w = AtA @ v
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(new - est) <= POWER_TOL * abs(new):
            est = new
            converged = True
            break
        est = new
    if not converged:
        # slow spectral gap; the bound must stay an upper bound
        est = float(np.linalg.eigvalsh(AtA)[-1])
    return est * SPEC_NORM_SAFETY


@dataclass(frozen=True)
class ObjectiveContext:
    mode: Mode
    M: int
    N: int
    sigma_hat: float = 1.0
    sigma0: float = 0.0
    G: np.ndarray | None = None
    HtH: np.ndarray | None = None
    Hty: np.ndarray | None = None
    y_sq: float = 0.0
    spec_norm_sq: float = 0.0

    @property
    def one_bit(self) -> bool:
        return self.mode == Mode.ONE_BIT


def build_context(inst: DetectionInstance, sigma0: float = 0.0) -> ObjectiveContext:
    if sigma0 < 0:
        raise ValueError(f"sigma0 must be >= 0, got {sigma0}")
    H = np.ascontiguousarray(inst.H, dtype=np.float64)
    y = np.ascontiguousarray(inst.y, dtype=np.float64)
    M, N = H.shape
    if Mode(inst.mode) == Mode.ONE_BIT:
        sigma_hat = inst.sigma + sigma0
        if not inst.sigma >= 0 or not sigma_hat > 0:
            raise InvalidInstanceError(f"one-bit instance needs sigma + sigma0 > 0 (sigma={inst.sigma}, sigma0={sigma0})")
        G = np.ascontiguousarray((y / sigma_hat)[:, None] * H)
        return ObjectiveContext(Mode.ONE_BIT, M, N, sigma_hat=sigma_hat, sigma0=sigma0, G=G,
                                spec_norm_sq=spectral_norm_sq(G))
    if not inst.sigma >= 0:
        raise InvalidInstanceError(f"sigma must be >= 0, got {inst.sigma}")
    return ObjectiveContext(Mode.CLASSICAL, M, N, sigma_hat=inst.sigma, sigma0=0.0,
                            HtH=np.ascontiguousarray(H.T @ H), Hty=H.T @ y, y_sq=float(y @ y),
                            spec_norm_sq=spectral_norm_sq(H))


def f_value(ctx: ObjectiveContext, x: np.ndarray, counter: OpCounter | None = None) -> float:
    x = np.asarray(x, dtype=np.float64)
    if ctx.one_bit:
        if counter is not None:
            counter.count("phi", ctx.M)
            counter.count("flops", 2 * ctx.M * ctx.N + (LOG_PHI_FLOPS + 1) * ctx.M)
        return float(onebit_f(ctx.G, x))
    if counter is not None:
        counter.count("flops", 2 * ctx.N * ctx.N + 4 * ctx.N + 2)
    return float(classical_f(ctx.HtH, ctx.Hty, ctx.y_sq, x))


def grad_f(ctx: ObjectiveContext, x: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    return grad_majorant(ctx, x, np.zeros(ctx.N), 0.0, counter)


def grad_majorant(ctx: ObjectiveContext, z: np.ndarray, x_bar: np.ndarray, lam: float,
                  counter: OpCounter | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty(ctx.N)
    if ctx.one_bit:
        onebit_grad_f(ctx.G, z, out)
        if counter is not None:
            counter.count("phi", ctx.M)
            counter.count("flops", 4 * ctx.M * ctx.N + PSI_FLOPS * ctx.M + 2 * ctx.N)
    else:
        classical_grad_f(ctx.HtH, ctx.Hty, z, out)
        if counter is not None:
            counter.count("flops", 2 * ctx.N * ctx.N + 3 * ctx.N)
    if lam != 0.0:
        out -= 2.0 * lam * np.asarray(x_bar, dtype=np.float64)
    return out


def penalized_value(ctx: ObjectiveContext, x: np.ndarray, lam: float) -> float:
    """F_lambda(x) = f(x) - lambda ||x||^2."""
    x = np.asarray(x, dtype=np.float64)
    return f_value(ctx, x) - lam * float(x @ x)


def majorant_value(ctx: ObjectiveContext, x: np.ndarray, x_bar: np.ndarray, lam: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_bar = np.asarray(x_bar, dtype=np.float64)
    return f_value(ctx, x) - 2.0 * lam * float(x_bar @ (x - x_bar)) - lam * float(x_bar @ x_bar)


def lipschitz_bound(ctx: ObjectiveContext) -> float:
    """Certified Lipschitz constant of grad f on the box.

    For one-bit, the curvature of -log Phi is psi(t)(psi(t) + t) < 1, so
    ||G||_2^2 bounds the Hessian; for classical it is ||H||_2^2.
    """
    return ctx.spec_norm_sq
