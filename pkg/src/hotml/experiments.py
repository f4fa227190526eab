"""Per-instance property experiments (binary landing, duality gap, large-M recovery).

Each experiment is a pure function of (seed, instance index), so results are
identical whatever the number of worker processes.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from .baselines import box_relax_solve, exhaustive_ml
from .bench import trial_rng
from .model import ChannelSpec, Mode, sign, synthesize_instance
from .objective import build_context, lipschitz_bound
from .solver import DualCurve, SolverConfig, gemm_solve, homotopy_solve
from .unfolded import forward_batch, NetInputs, tied_params


def parallel_map(fn, items, workers: int = 1) -> list:
    """Ordered map; a pool is only started for ``workers > 1``."""
    items = list(items)
    if workers <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def landing_deviation(i: int, seed: int, spec: ChannelSpec, snr_db: float, starts: int,
                      cfg: SolverConfig) -> list[float]:
    """max_j ||x_j| - 1| after GEMM at lambda = L_f bound, one entry per random start."""
    inst = synthesize_instance(spec, snr_db, Mode.ONE_BIT, trial_rng(seed, 0, i))
    ctx = build_context(inst, cfg.sigma0)
    lam = lipschitz_bound(ctx)
    rng = trial_rng(seed, 0, i, 1)
    out = []
    for _ in range(starts):
        x = gemm_solve(ctx, lam, rng.uniform(-1.0, 1.0, ctx.N), cfg).x
        out.append(float(np.max(np.abs(np.abs(x) - 1.0))))
    return out


def binary_landing(seed: int, instances: int = 50, starts: int = 4, spec: ChannelSpec = ChannelSpec(16, 4),
                   snr_db: float = 10.0, tol: float = 1e-8, max_iter: int = 10_000,
                   workers: int = 1) -> np.ndarray:
    """(instances, starts) array of distances from the vertex set."""
    cfg = SolverConfig(inner_tol=tol, inner_max_iter=max_iter)
    fn = partial(landing_deviation, seed=seed, spec=spec, snr_db=snr_db, starts=starts, cfg=cfg)
    return np.array(parallel_map(fn, range(instances), workers))


def duality_gap(i: int, seed: int, spec: ChannelSpec, snr_db: float, resolution: int, lambda_points: int,
                lambda_max_factor: float) -> tuple[float, float]:
    """(f*, max over the lambda grid of the grid dual) for one instance, true noise level."""
    inst = synthesize_instance(spec, snr_db, Mode.ONE_BIT, trial_rng(seed, 0, i))
    ctx = build_context(inst, 0.0)
    _, f_star = exhaustive_ml(ctx)
    lams = np.linspace(0.0, lambda_max_factor * lipschitz_bound(ctx), lambda_points)
    return f_star, float(np.max(DualCurve(ctx, resolution)(lams)))


def duality_gaps(seed: int, instances: int = 20, spec: ChannelSpec = ChannelSpec(4, 2), snr_db: float = 10.0,
                 resolution: int = 81, lambda_points: int = 200, lambda_max_factor: float = 2.0,
                 workers: int = 1) -> np.ndarray:
    """(instances, 2) array of (f*, max d)."""
    fn = partial(duality_gap, seed=seed, spec=spec, snr_db=snr_db, resolution=resolution,
                 lambda_points=lambda_points, lambda_max_factor=lambda_max_factor)
    return np.array(parallel_map(fn, range(instances), workers))


def recovery_trial(i: int, seed: int, spec: ChannelSpec, snr_db: float, mismatch: tuple[float, ...],
                   cfg: SolverConfig) -> list[bool]:
    """Exact recovery by convex box relaxation + sign, for each sigma_hat = m * sigma in ``mismatch``."""
    inst = synthesize_instance(spec, snr_db, Mode.ONE_BIT, trial_rng(seed, 0, i))
    out = []
    for m in mismatch:
        ctx = build_context(inst, (m - 1.0) * inst.sigma)
        out.append(bool(np.array_equal(sign(box_relax_solve(ctx, cfg)), inst.x_true)))
    return out


def recovery_rates(seed: int, trials: int = 200, spec: ChannelSpec = ChannelSpec(2000, 4), snr_db: float = 10.0,
                   mismatch: tuple[float, ...] = (1.0, 2.0), workers: int = 1) -> np.ndarray:
    """(trials, len(mismatch)) boolean array; columns share instances."""
    fn = partial(recovery_trial, seed=seed, spec=spec, snr_db=snr_db, mismatch=tuple(mismatch),
                 cfg=SolverConfig())
    return np.array(parallel_map(fn, range(trials), workers))


def unfold_replay_error(i: int, seed: int, spec: ChannelSpec, snr_db: float, K: int) -> float:
    """Max deviation between the first K solver iterates and a tied K-layer forward pass."""
    inst = synthesize_instance(spec, snr_db, Mode.ONE_BIT, trial_rng(seed, 0, i))
    cfg = SolverConfig()
    ctx = build_context(inst, cfg.sigma0)
    x0 = trial_rng(seed, 0, i, 1).uniform(-1.0, 1.0, ctx.N)
    res = homotopy_solve(ctx, cfg, x0=x0, trace_steps=K)
    if len(res.steps) < K:
        raise RuntimeError(f"solver stopped after {len(res.steps)} < {K} steps")
    params = tied_params(res.step_params, x0, ctx.M)
    _, tape = forward_batch(params, NetInputs.from_context(inst, ctx))
    net = np.array([x[0] for x in tape.xs[1:]])
    return float(np.max(np.abs(net - res.steps)))


def unfold_replay(seed: int, instances: int = 10, K: int = 10, spec: ChannelSpec = ChannelSpec(18, 4),
                  snr_db: float = 10.0, workers: int = 1) -> np.ndarray:
    fn = partial(unfold_replay_error, seed=seed, spec=spec, snr_db=snr_db, K=K)
    return np.array(parallel_map(fn, range(instances), workers))
