"""
Scene generation for binary (QPSK) MIMO with optional one-bit quantization.

Complex scenes are drawn per the Rayleigh or Kronecker-correlated channel
model and lifted to the real-valued model the detectors work on::

    y = [Re y_C; Im y_C],  x = [Re x_C; Im x_C],
    H = [[Re H_C, -Im H_C], [Im H_C, Re H_C]]

so that (M, N) = (2 M_C, 2 N_C) and sigma^2 = sigma_C^2 / 2.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidCorrelationError, InvalidDimensionError


class Mode(str, enum.Enum):
    ONE_BIT = "onebit"
    CLASSICAL = "classical"


class ChannelKind(str, enum.Enum):
    RAYLEIGH_IID = "rayleigh"
    KRONECKER = "kronecker"


@dataclass(frozen=True)
class ChannelSpec:
    M_C: int
    N_C: int
    kind: ChannelKind = ChannelKind.RAYLEIGH_IID
    r: complex = 0.0
    seed: int = 0

    @property
    def M(self) -> int:
        return 2 * self.M_C

    @property
    def N(self) -> int:
        return 2 * self.N_C

    def validate(self) -> None:
        if self.M_C < 1 or self.N_C < 1:
            raise InvalidDimensionError(f"channel dimensions must be positive, got ({self.M_C}, {self.N_C})")
        if abs(self.r) > 1.0:
            raise InvalidCorrelationError(f"|r| must be <= 1, got |{self.r}| = {abs(self.r)}")


@dataclass
class ComplexScene:
    H_C: np.ndarray
    x_C: np.ndarray
    v_C: np.ndarray
    y_C: np.ndarray
    sigma_C_sq: float


@dataclass
class DetectionInstance:
    """One real-valued detection problem together with its ground truth.

    ``v`` is the lifted noise draw that generated ``y``; it is kept so the
    quantizer consistency ``y * (H x_true + v) >= 0`` can be audited.
    """

    H: np.ndarray
    y: np.ndarray
    sigma: float
    x_true: np.ndarray
    mode: Mode
    v: np.ndarray | None = None

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[1]


@dataclass
class InstanceBatch:
    """Stacked instances sharing (M, N) and mode; used for training."""

    H: np.ndarray        # (B, M, N)
    y: np.ndarray        # (B, M)
    sigma: np.ndarray    # (B,)
    x_true: np.ndarray   # (B, N)
    mode: Mode
    v: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return self.H.shape[0]

    def __getitem__(self, i: int) -> DetectionInstance:
        return DetectionInstance(self.H[i], self.y[i], float(self.sigma[i]), self.x_true[i], self.mode,
                                 None if self.v is None else self.v[i])


def sign(x: np.ndarray) -> np.ndarray:
    """Element-wise sign with sgn(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def quantize_one_bit(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    return sign(z.real) + 1j * sign(z.imag)


def correlation_matrix(r: complex, n: int) -> np.ndarray:
    """Exponential correlation: r**(j - i) above the diagonal, Hermitian below."""
    i, j = np.indices((n, n))
    d = j - i
    R = np.ones((n, n), dtype=np.complex128)
    upper = d > 0
    R[upper] = np.complex128(r) ** d[upper]
    R[d < 0] = np.conj(R.T[d < 0])
    return R


def hermitian_sqrt(R: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(R)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.conj().T


def generate_channel(spec: ChannelSpec, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """Draw H_C of shape (M_C, N_C), or (batch, M_C, N_C) if ``batch`` is given."""
    spec.validate()
    shape = (spec.M_C, spec.N_C) if batch is None else (batch, spec.M_C, spec.N_C)
    g = rng.standard_normal(shape + (2,))
    H = (g[..., 0] + 1j * g[..., 1]) * math.sqrt(0.5)
    if spec.kind == ChannelKind.KRONECKER:
        Rr = hermitian_sqrt(correlation_matrix(spec.r, spec.M_C))
        Rt = hermitian_sqrt(correlation_matrix(spec.r, spec.N_C))
        H = Rr @ H @ Rt
    return H


def noise_variance(snr_db, N_C: int) -> np.ndarray | float:
    """Complex noise variance sigma_C^2 for the given SNR.

    E||H_C x_C||^2 = 2 N_C M_C for unit-variance (or unit-diagonal correlated)
    channels, and E||v_C||^2 = M_C sigma_C^2, hence sigma_C^2 = 2 N_C / SNR.
    """
    snr = np.power(10.0, np.asarray(snr_db, dtype=float) / 10.0)
    out = 2.0 * N_C / snr
    return float(out) if out.ndim == 0 else out


def lift_vector(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1)


def lift_matrix(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H)
    top = np.concatenate([H.real, -H.imag], axis=-1)
    bottom = np.concatenate([H.imag, H.real], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def unlift_vector(v: np.ndarray) -> np.ndarray:
    n = v.shape[-1] // 2
    return v[..., :n] + 1j * v[..., n:]


def unlift_matrix(H: np.ndarray) -> np.ndarray:
    m, n = H.shape[-2] // 2, H.shape[-1] // 2
    return H[..., :m, :n] + 1j * H[..., m:, :n]


def draw_scenes(spec: ChannelSpec, snr_db, mode: Mode, rng: np.random.Generator) -> ComplexScene:
    """Draw a stack of complex scenes, one per entry of ``snr_db``."""
    snr_db = np.atleast_1d(np.asarray(snr_db, dtype=float))
    if np.isnan(snr_db).any():
        raise ValueError("snr_db must not be NaN")
    B = snr_db.size
    H_C = generate_channel(spec, rng, batch=B)
    bits = rng.integers(0, 2, size=(B, spec.N_C, 2))
    x_C = (2.0 * bits[..., 0] - 1.0) + 1j * (2.0 * bits[..., 1] - 1.0)
    sigma_C_sq = noise_variance(snr_db, spec.N_C)
    g = rng.standard_normal((B, spec.M_C, 2))
    v_C = (g[..., 0] + 1j * g[..., 1]) * np.sqrt(sigma_C_sq / 2.0)[:, None]
    r_C = np.einsum("bmn,bn->bm", H_C, x_C) + v_C
    y_C = quantize_one_bit(r_C) if Mode(mode) == Mode.ONE_BIT else r_C
    return ComplexScene(H_C, x_C, v_C, y_C, sigma_C_sq)


def lift_scene(scene: ComplexScene, mode: Mode) -> InstanceBatch:
    mode = Mode(mode)
    y = lift_vector(scene.y_C)
    if mode == Mode.ONE_BIT:
        y = y.real.astype(np.float64)
    return InstanceBatch(
        H=lift_matrix(scene.H_C).astype(np.float64),
        y=np.ascontiguousarray(y, dtype=np.float64),
        sigma=np.sqrt(np.asarray(scene.sigma_C_sq, dtype=float) / 2.0).reshape(-1),
        x_true=lift_vector(scene.x_C).astype(np.float64),
        mode=mode,
        v=lift_vector(scene.v_C).astype(np.float64),
    )


def synthesize_batch(spec: ChannelSpec, snr_db, mode: Mode, rng: np.random.Generator) -> InstanceBatch:
    return lift_scene(draw_scenes(spec, snr_db, mode, rng), mode)


def synthesize_instance(spec: ChannelSpec, snr_db: float, mode: Mode, rng: np.random.Generator) -> DetectionInstance:
    return synthesize_batch(spec, [snr_db], mode, rng)[0]
