"""
DeepHOTML: the homotopy iteration unrolled into K trainable layers.

One-bit layer k::

    z^k     = x^k + alpha_k (x^k - x^{k-1})
    u^k     = psi(w_k * (G z^k) + b_k)
    x^{k+1} = Pi(z^k + beta_k G^T u^k + gamma_k x^k)

Classical layer k::

    x^{k+1} = Pi(z^k - beta_k H^T H z^k + omega_k H^T y + gamma_k x^k)

with x^0 = x^{-1} = Pi(W0 y + b0). Gradients are derived by hand; the box
projection passes gradient only strictly inside (-1, 1).
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, DivergenceError, ParamFileError
from .model import ChannelSpec, DetectionInstance, InstanceBatch, Mode, synthesize_batch
from .numerics import PSI_FLOPS, OpCounter, psi
from .objective import ObjectiveContext

log = logging.getLogger(__name__)

ONEBIT_LAYER_KEYS = ("alpha", "beta", "gamma", "w", "b")
CLASSICAL_LAYER_KEYS = ("alpha", "beta", "omega", "gamma")


@dataclass
class LayerParamsOneBit:
    alpha: float
    beta: float
    gamma: float
    w: np.ndarray
    b: np.ndarray


@dataclass
class LayerParamsClassical:
    alpha: float
    beta: float
    omega: float
    gamma: float


@dataclass
class ZeroLayerParams:
    W0: np.ndarray
    b0: np.ndarray


@dataclass
class NetworkParams:
    """All trainable arrays, stacked over layers (leading axis K)."""

    mode: Mode
    M: int
    N: int
    K: int
    arrays: dict[str, np.ndarray]
    version: int = 1

    @property
    def layer_keys(self) -> tuple[str, ...]:
        return ONEBIT_LAYER_KEYS if self.mode == Mode.ONE_BIT else CLASSICAL_LAYER_KEYS

    @property
    def keys(self) -> tuple[str, ...]:
        return ("W0", "b0") + self.layer_keys

    @property
    def zero(self) -> ZeroLayerParams:
        return ZeroLayerParams(self.arrays["W0"], self.arrays["b0"])

    @property
    def layers(self) -> list:
        a = self.arrays
        if self.mode == Mode.ONE_BIT:
            return [LayerParamsOneBit(float(a["alpha"][k]), float(a["beta"][k]), float(a["gamma"][k]),
                                      a["w"][k], a["b"][k]) for k in range(self.K)]
        return [LayerParamsClassical(float(a["alpha"][k]), float(a["beta"][k]), float(a["omega"][k]),
                                     float(a["gamma"][k])) for k in range(self.K)]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        M, N, K = self.M, self.N, self.K
        s = {"W0": (N, M), "b0": (N,), "alpha": (K,), "beta": (K,), "gamma": (K,)}
        if self.mode == Mode.ONE_BIT:
            s.update(w=(K, M), b=(K, M))
        else:
            s.update(omega=(K,))
        return s

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.mode, self.M, self.N, self.K, {k: v.copy() for k, v in self.arrays.items()},
                             self.version)

    def check(self) -> None:
        for k, shape in self.shapes().items():
            if self.arrays[k].shape != shape:
                raise DimensionMismatchError(f"{k} has shape {self.arrays[k].shape}, expected {shape}")
            if not np.isfinite(self.arrays[k]).all():
                raise ValueError(f"non-finite values in {k}")


def init_params(mode: Mode, M: int, N: int, K: int, rng: np.random.Generator, std: float = 0.1) -> NetworkParams:
    """Initial values from the training recipe; Gaussian entries have variance ``std**2`` = 0.01."""
    mode = Mode(mode)
    a = {
        "W0": std * rng.standard_normal((N, M)),
        "b0": std * rng.standard_normal(N),
        "alpha": np.full(K, 0.5),
        "beta": np.full(K, 0.01),
        "gamma": np.full(K, 0.001),
    }
    if mode == Mode.ONE_BIT:
        a["w"] = std * rng.standard_normal((K, M))
        a["b"] = std * rng.standard_normal((K, M))
    else:
        a["omega"] = np.full(K, -0.01)
    return NetworkParams(mode, M, N, K, a)


def tied_params(step_params: np.ndarray, x0: np.ndarray, M: int) -> NetworkParams:
    """One-bit network that replays a recorded GEMM/homotopy run.

    ``step_params`` rows are (lambda, alpha, beta, restarted) per step, as
    returned in ``GemmResult.step_params``. With w = 1, b = 0 and
    gamma = 2 beta lambda each layer is exactly one solver step.
    """
    lam, alpha, beta = step_params[:, 0], step_params[:, 1], step_params[:, 2]
    K = len(step_params)
    N = len(x0)
    a = {
        "W0": np.zeros((N, M)),
        "b0": np.asarray(x0, dtype=float).copy(),
        "alpha": alpha.copy(),
        "beta": beta.copy(),
        "gamma": 2.0 * beta * lam,
        "w": np.ones((K, M)),
        "b": np.zeros((K, M)),
    }
    return NetworkParams(Mode.ONE_BIT, M, N, K, a)


# ---------------------------------------------------------------- inputs

@dataclass
class NetInputs:
    """Per-sample network inputs, batched on the leading axis."""

    mode: Mode
    y: np.ndarray                    # (B, M)
    G: np.ndarray | None = None      # (B, M, N) one-bit
    HtH: np.ndarray | None = None    # (B, N, N) classical
    Hty: np.ndarray | None = None    # (B, N) classical
    x_true: np.ndarray | None = None

    @property
    def batch(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_batch(cls, batch: InstanceBatch, sigma0: float = 0.5) -> "NetInputs":
        if batch.mode == Mode.ONE_BIT:
            sig = batch.sigma + sigma0
            G = (batch.y / sig[:, None])[:, :, None] * batch.H
            return cls(Mode.ONE_BIT, batch.y, G=G, x_true=batch.x_true)
        HtH = np.einsum("bmi,bmj->bij", batch.H, batch.H)
        Hty = np.einsum("bmi,bm->bi", batch.H, batch.y)
        return cls(Mode.CLASSICAL, batch.y, HtH=HtH, Hty=Hty, x_true=batch.x_true)

    @classmethod
    def from_context(cls, inst: DetectionInstance, ctx: ObjectiveContext) -> "NetInputs":
        x = None if inst.x_true is None else inst.x_true[None]
        if ctx.one_bit:
            return cls(Mode.ONE_BIT, inst.y[None], G=ctx.G[None], x_true=x)
        return cls(Mode.CLASSICAL, inst.y[None], HtH=ctx.HtH[None], Hty=ctx.Hty[None], x_true=x)


@dataclass
class Tape:
    a0: np.ndarray
    xs: list = field(default_factory=list)   # x^0 .. x^K
    zs: list = field(default_factory=list)
    pre: list = field(default_factory=list)  # pre-projection a^k
    s: list = field(default_factory=list)    # G z^k (one-bit)
    t: list = field(default_factory=list)    # w * s + b
    u: list = field(default_factory=list)    # psi(t)
    Gtu: list = field(default_factory=list)  # G^T u or H^T H z


def _inside(a: np.ndarray) -> np.ndarray:
    return (a > -1.0) & (a < 1.0)


def _bmv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("bij,bj->bi", A, x)


def _bmtv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("bij,bi->bj", A, x)


def forward_batch(params: NetworkParams, inp: NetInputs, counter: OpCounter | None = None) -> tuple[np.ndarray, Tape]:
    """Run all K layers; returns x^K of shape (B, N) and the activation tape."""
    if inp.mode != params.mode:
        raise DimensionMismatchError(f"network is {params.mode.value}, inputs are {inp.mode.value}")
    M, N, K = params.M, params.N, params.K
    if inp.y.shape[1] != M or (inp.G is not None and inp.G.shape[1:] != (M, N)) or \
            (inp.HtH is not None and inp.HtH.shape[1:] != (N, N)):
        raise DimensionMismatchError(f"inputs do not match network dims (M, N) = ({M}, {N})")
    p = params.arrays
    B = inp.batch
    a0 = inp.y @ p["W0"].T + p["b0"]
    x = np.clip(a0, -1.0, 1.0)
    tape = Tape(a0=a0, xs=[x])
    x_prev = x
    one_bit = params.mode == Mode.ONE_BIT
    for k in range(K):
        z = x + p["alpha"][k] * (x - x_prev)
        if one_bit:
            s = _bmv(inp.G, z)
            t = p["w"][k] * s + p["b"][k]
            u = psi(t)
            Gtu = _bmtv(inp.G, u)
            a = z + p["beta"][k] * Gtu + p["gamma"][k] * x
            tape.s.append(s)
            tape.t.append(t)
            tape.u.append(u)
        else:
            Gtu = _bmv(inp.HtH, z)
            a = z - p["beta"][k] * Gtu + p["omega"][k] * inp.Hty + p["gamma"][k] * x
        tape.zs.append(z)
        tape.Gtu.append(Gtu)
        tape.pre.append(a)
        x_prev, x = x, np.clip(a, -1.0, 1.0)
        tape.xs.append(x)
    if counter is not None:
        if one_bit:
            counter.count("phi", B * K * M)
            per_layer = 4 * M * N + (2 + PSI_FLOPS) * M + 7 * N
        else:
            per_layer = 2 * N * N + 9 * N
        counter.count("flops", B * (K * per_layer + 2 * M * N + N))
    return x, tape


def forward(params: NetworkParams, inst: DetectionInstance, ctx: ObjectiveContext,
            counter: OpCounter | None = None) -> tuple[np.ndarray, Tape]:
    x, tape = forward_batch(params, NetInputs.from_context(inst, ctx), counter)
    return x[0], tape


def backward(params: NetworkParams, tape: Tape | None, inp: NetInputs, residual: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of sum_b <residual_b, x^K_b> w.r.t. every parameter, summed over the batch.

    Pass ``residual = 2 (x^K - x_true)`` for the squared-error loss.
    """
    if tape is None or len(tape.xs) != params.K + 1:
        raise ValueError("backward needs the tape from a matching forward call")
    p = params.arrays
    one_bit = params.mode == Mode.ONE_BIT
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    gx = np.asarray(residual, dtype=float).reshape(tape.xs[-1].shape)
    pending = np.zeros_like(gx)   # gradient reaching x^{k-1} through z^k
    for k in range(params.K - 1, -1, -1):
        xk, xkm1 = tape.xs[k], tape.xs[k - 1] if k > 0 else tape.xs[0]
        ga = gx * _inside(tape.pre[k])
        grads["gamma"][k] = np.sum(ga * xk)
        if one_bit:
            grads["beta"][k] = np.sum(ga * tape.Gtu[k])
            gu = p["beta"][k] * _bmv(inp.G, ga)
            u, t = tape.u[k], tape.t[k]
            gt = gu * (-u * (u + t))
            grads["w"][k] = np.sum(gt * tape.s[k], axis=0)
            grads["b"][k] = np.sum(gt, axis=0)
            gz = ga + _bmtv(inp.G, gt * p["w"][k])
        else:
            grads["beta"][k] = -np.sum(ga * tape.Gtu[k])
            grads["omega"][k] = np.sum(ga * inp.Hty)
            gz = ga - p["beta"][k] * _bmv(inp.HtH, ga)   # H^T H is symmetric
        grads["alpha"][k] = np.sum(gz * (xk - xkm1))
        gx = p["gamma"][k] * ga + (1.0 + p["alpha"][k]) * gz + pending
        pending = -p["alpha"][k] * gz
    # x^{-1} is x^0
    g0 = (gx + pending) * _inside(tape.a0)
    grads["W0"] = g0.T @ inp.y
    grads["b0"] = g0.sum(axis=0)
    return grads


def loss_and_grads(params: NetworkParams, inp: NetInputs) -> tuple[float, dict[str, np.ndarray]]:
    x, tape = forward_batch(params, inp)
    r = x - inp.x_true
    return float(np.sum(r * r)), backward(params, tape, inp, 2.0 * r)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    iters: int = 10000
    batch: int = 500
    lr: float = 1e-3
    decay: float | None = None      # None: 0.9 one-bit, 0.95 classical
    decay_every: int = 500
    snr_lo: float | None = None     # None: 5-22 dB one-bit, 0-18 dB classical
    snr_hi: float | None = None
    sigma0: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 100

    def resolved(self, mode: Mode) -> "TrainConfig":
        one_bit = Mode(mode) == Mode.ONE_BIT
        lo, hi = (5.0, 22.0) if one_bit else (0.0, 18.0)
        return TrainConfig(**{**self.__dict__,
                              "decay": self.decay if self.decay is not None else (0.9 if one_bit else 0.95),
                              "snr_lo": self.snr_lo if self.snr_lo is not None else lo,
                              "snr_hi": self.snr_hi if self.snr_hi is not None else hi})

    def step_size(self, it: int) -> float:
        """Staircase decay; ``it`` counts completed iterations from 0."""
        return self.lr * self.decay ** (it // self.decay_every)


class AdamState:
    def __init__(self, params: NetworkParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: NetworkParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            params.arrays[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TrainResult:
    params: NetworkParams
    losses: np.ndarray   # mean per-sample loss of every iteration


def train(mode: Mode, spec: ChannelSpec, K: int, cfg: TrainConfig, rng: np.random.Generator,
          params: NetworkParams | None = None) -> TrainResult:
    """Fit the network by ADAM on freshly drawn mini-batches (no fixed dataset)."""
    mode = Mode(mode)
    cfg = cfg.resolved(mode)
    if params is None:
        params = init_params(mode, spec.M, spec.N, K, rng)
    else:
        params = params.copy()
    adam = AdamState(params, cfg.beta1, cfg.beta2, cfg.eps)
    losses = np.empty(cfg.iters)
    for it in range(cfg.iters):
        snr = rng.uniform(cfg.snr_lo, cfg.snr_hi, size=cfg.batch)
        inp = NetInputs.from_batch(synthesize_batch(spec, snr, mode, rng), cfg.sigma0)
        loss, grads = loss_and_grads(params, inp)
        if not np.isfinite(loss):
            raise DivergenceError(f"training loss became {loss} at iteration {it}")
        adam.step(params, grads, cfg.step_size(it))
        losses[it] = loss / cfg.batch
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iter %d  loss %.5f  lr %.3g", it + 1, losses[max(0, it + 1 - cfg.log_every):it + 1].mean(),
                     cfg.step_size(it))
    return TrainResult(params, losses)


# ---------------------------------------------------------------- parameter files
#
# Layout (little endian):
#   8 bytes magic b"HOTMLNET", uint32 version, uint8 mode (0 one-bit, 1 classical),
#   uint32 M, N, K, then float64 arrays in order W0 (N x M, row major), b0,
#   and per-layer stacks alpha, beta, gamma, w (K x M), b (K x M)   [one-bit]
#                   or alpha, beta, omega, gamma                   [classical]

MAGIC = b"HOTMLNET"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIBIII")


def save_params(params: NetworkParams, path: str | Path) -> None:
    params.check()
    mode_byte = 0 if params.mode == Mode.ONE_BIT else 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, mode_byte, params.M, params.N, params.K))
        for k in params.keys:
            fh.write(np.ascontiguousarray(params.arrays[k], dtype="<f8").tobytes())


def load_params(path: str | Path, expect: tuple[int, int, int] | None = None) -> NetworkParams:
    """Read a parameter file; ``expect = (M, N, K)`` enforces dimensions."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParamFileError(f"{path}: truncated header")
    magic, version, mode_byte, M, N, K = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParamFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParamFileError(f"{path}: unsupported format version {version}")
    if mode_byte not in (0, 1):
        raise ParamFileError(f"{path}: bad mode byte {mode_byte}")
    if expect is not None and tuple(expect) != (M, N, K):
        raise DimensionMismatchError(f"{path}: file has (M, N, K) = ({M}, {N}, {K}), expected {tuple(expect)}")
    mode = Mode.ONE_BIT if mode_byte == 0 else Mode.CLASSICAL
    params = NetworkParams(mode, M, N, K, {}, version)
    offset = _HEADER.size
    shapes = params.shapes()
    for k in params.keys:
        shape = shapes[k]
        n = int(np.prod(shape))
        end = offset + 8 * n
        if end > len(data):
            raise ParamFileError(f"{path}: truncated at {k}")
        params.arrays[k] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise ParamFileError(f"{path}: {len(data) - offset} trailing bytes")
    return params


# ---------------------------------------------------------------- gradient check

def near_kink(tape: Tape, margin: float) -> bool:
    """True if any pre-projection activation lies within ``margin`` of +-1."""
    for a in [tape.a0] + tape.pre:
        if np.any(np.abs(np.abs(a) - 1.0) < margin):
            return True
    return False


def gradient_check(params: NetworkParams, inp: NetInputs, h: float = 1e-6) -> dict[str, float]:
    """Compare ``backward`` against central differences of the squared-error loss.

    Returns the relative error ``||fd - g|| / max(||fd||, ||g||)`` for every
    parameter block: W0, b0 and each per-layer scalar or vector.
    """
    _, grads = loss_and_grads(params, inp)
    work = params.copy()
    errors = {}

    def fd_entry(key, idx):
        arr = work.arrays[key]
        old = arr[idx]
        arr[idx] = old + h
        lp = loss_and_grads_value(work, inp)
        arr[idx] = old - h
        lm = loss_and_grads_value(work, inp)
        arr[idx] = old
        return (lp - lm) / (2.0 * h)

    for key in params.keys:
        arr = params.arrays[key]
        blocks = [(key, None)] if key in ("W0", "b0") else [(f"{key}[{k}]", k) for k in range(params.K)]
        for name, k in blocks:
            idxs = list(np.ndindex(arr.shape)) if k is None else [(k,) + i for i in np.ndindex(arr.shape[1:])]
            fd = np.array([fd_entry(key, i) for i in idxs])
            g = np.array([grads[key][i] for i in idxs])
            denom = max(np.linalg.norm(fd), np.linalg.norm(g))
            errors[name] = 0.0 if denom == 0.0 else float(np.linalg.norm(fd - g) / denom)
    return errors


def loss_and_grads_value(params: NetworkParams, inp: NetInputs) -> float:
    x, _ = forward_batch(params, inp)
    r = x - inp.x_true
    return float(np.sum(r * r))


def random_params(mode: Mode, M: int, N: int, K: int, rng: np.random.Generator) -> NetworkParams:
    """Parameters spread well beyond the training init, for gradient checks."""
    p = init_params(mode, M, N, K, rng, std=0.3)
    a = p.arrays
    a["alpha"] = rng.uniform(0.0, 1.0, K)
    a["beta"] = rng.uniform(0.002, 0.05, K)
    a["gamma"] = rng.uniform(-0.01, 0.05, K)
    if p.mode == Mode.ONE_BIT:
        a["w"] = 1.0 + 0.3 * rng.standard_normal((K, M))
    else:
        a["omega"] = rng.uniform(0.002, 0.05, K)
    return p


def gradcheck_suite(mode: Mode, M: int, N: int, K: int, draws: int, rng: np.random.Generator,
                    batch: int = 4, snr_db: float = 10.0, margin: float = 1e-4, h: float = 1e-6,
                    max_redraws: int = 1000) -> tuple[float, int]:
    """Worst block-wise relative error over ``draws`` parameter/input draws.

    Draws whose forward pass puts any pre-projection value within ``margin``
    of the clamp corners are discarded and redrawn, since the loss is not
    differentiable there. Returns (max error, number discarded).
    """
    mode = Mode(mode)
    if N % 2 or M % 2:
        raise ValueError("M and N are real dimensions of a complex system and must be even")
    spec = ChannelSpec(M // 2, N // 2)
    worst, skipped = 0.0, 0
    done = 0
    while done < draws:
        params = random_params(mode, M, N, K, rng)
        inp = NetInputs.from_batch(synthesize_batch(spec, np.full(batch, snr_db), mode, rng))
        _, tape = forward_batch(params, inp)
        if near_kink(tape, margin):
            skipped += 1
            if skipped > max_redraws:
                raise RuntimeError("could not find draws away from the clamp corners")
            continue
        worst = max(worst, max(gradient_check(params, inp, h).values()))
        done += 1
    return worst, skipped
