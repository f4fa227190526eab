"""
Stable Gaussian-tail kernels and operation counters.

The scalar kernels (``phi_scalar``, ``log_phi_scalar``, ``psi_scalar``) are
numba-compiled so the solver loops can call them directly. ``phi``,
``log_phi`` and ``psi`` accept scalars or arrays.

Below ``TAIL_CUT`` the lower tail is evaluated through the Mills ratio
R(u) = (1 - Phi(u)) / phi(u), u = -t, using a fixed-depth backward continued
fraction. That gives log Phi(t) = log phi(t) + log R(-t) and
Psi(t) = 1 / R(-t) without ever forming the underflowing CDF.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numba
import numpy as np

TAIL_CUT = -6.0
_CF_DEPTH = 30
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)

# Per-element FLOP charges for the counters; Phi itself goes in its own bucket.
PSI_FLOPS = 6
LOG_PHI_FLOPS = 2


@numba.njit(cache=True, inline="always")
def _mills_ratio(u):
    # valid for u >= 6; depth 30 is at machine precision there
    acc = u
    for k in range(_CF_DEPTH, 0, -1):
        acc = u + k / acc
    return 1.0 / acc


@numba.njit(cache=True)
def phi_scalar(t):
    return 0.5 * math.erfc(-t * _INV_SQRT2)


@numba.njit(cache=True)
def log_phi_scalar(t):
    if t != t:
        return t
    if t <= TAIL_CUT:
        return -0.5 * t * t - _LOG_SQRT_2PI + math.log(_mills_ratio(-t))
    if t > 0.0:
        return math.log1p(-0.5 * math.erfc(t * _INV_SQRT2))
    return math.log(0.5 * math.erfc(-t * _INV_SQRT2))


@numba.njit(cache=True)
def psi_scalar(t):
    if t != t:
        return t
    if t <= TAIL_CUT:
        return 1.0 / _mills_ratio(-t)
    return math.exp(-0.5 * t * t - _LOG_SQRT_2PI - log_phi_scalar(t))


@numba.njit(cache=True)
def _phi_array(t, out):
    for i in range(t.size):
        out[i] = phi_scalar(t[i])


@numba.njit(cache=True)
def _log_phi_array(t, out):
    for i in range(t.size):
        out[i] = log_phi_scalar(t[i])


@numba.njit(cache=True)
def _psi_array(t, out):
    for i in range(t.size):
        out[i] = psi_scalar(t[i])


def _apply(kernel_arr, kernel_scalar, t):
    if np.isscalar(t):
        return float(kernel_scalar(float(t)))
    t = np.asarray(t, dtype=np.float64)
    flat = np.ascontiguousarray(t).reshape(-1)
    out = np.empty_like(flat)
    kernel_arr(flat, out)
    return out.reshape(t.shape)


def phi(t):
    """Standard normal CDF."""
    return _apply(_phi_array, phi_scalar, t)


def log_phi(t):
    """log of the standard normal CDF, finite down to t = -1e150 or so."""
    return _apply(_log_phi_array, log_phi_scalar, t)


def psi(t):
    """Inverse Mills ratio ``pdf(t) / cdf(t)``; the derivative of ``-log_phi`` is ``-psi``."""
    return _apply(_psi_array, psi_scalar, t)


def psi_prime(t, psi_t=None):
    """Derivative of ``psi`` from its own value: ``-psi (psi + t)``."""
    if psi_t is None:
        psi_t = psi(t)
    return -psi_t * (psi_t + t)


CounterKind = Literal["flops", "phi"]


@dataclass
class OpCounter:
    """Worker-local FLOP and Phi-evaluation tallies for one or more detections."""

    flops: int = 0
    phi_calls: int = 0

    def count(self, kind: CounterKind, n: int) -> None:
        if kind == "flops":
            self.flops += int(n)
        elif kind == "phi":
            self.phi_calls += int(n)
        else:
            raise ValueError(f"unknown counter kind {kind!r}")

    def reset(self) -> None:
        self.flops = 0
        self.phi_calls = 0

    def merge(self, other: "OpCounter") -> "OpCounter":
        self.flops += other.flops
        self.phi_calls += other.phi_calls
        return self

    def snapshot(self) -> tuple[int, int]:
        return self.flops, self.phi_calls
