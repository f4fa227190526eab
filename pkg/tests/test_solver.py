import numpy as np
import pytest
from conftest import classical_ctx, onebit_ctx

from hotml.baselines import exhaustive_ml
from hotml.errors import NumericalError, OracleTooLargeError
from hotml.model import ChannelSpec, Mode, synthesize_instance
from hotml.numerics import OpCounter
from hotml.objective import build_context, f_value, lipschitz_bound, penalized_value
from hotml.solver import DualCurve, Schedule, SolverConfig, dual_value, gemm_solve, homotopy_solve, project_box

CL = SolverConfig.for_mode(Mode.CLASSICAL)
OB = SolverConfig.for_mode(Mode.ONE_BIT)


def test_project_box():
    assert np.array_equal(project_box(np.array([1.5, -0.3, -7])), [1, -0.3, -1])
    x = np.array([0.2, -1.0, 1.0])
    assert np.array_equal(project_box(x), x)
    with pytest.raises(NumericalError):
        project_box(np.array([np.nan]))


def test_config_defaults_and_validation():
    assert (OB.mu0, OB.inner_max_iter, CL.mu0, CL.inner_max_iter) == (0.1, 300, 1.0, 100)
    assert OB.lambda0 == 0.01 and OB.sigma0 == 0.5 and OB.lambda_stop_tol == 1e-4
    for bad in (dict(shrink=1.0), dict(mu0=0.0), dict(lambda0=-1.0), dict(schedule=Schedule.GEOMETRIC, c=1.0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad).validate()


def test_classical_identity_lambda0():
    ctx = classical_ctx(np.eye(4), 0.5 * np.ones(4))
    res = gemm_solve(ctx, 0.0, np.zeros(4), SolverConfig.for_mode(Mode.CLASSICAL, inner_tol=1e-12, inner_max_iter=1000))
    assert np.allclose(res.x, 0.5, atol=1e-9)


def test_classical_identity_lambda1_goes_to_ones():
    ctx = classical_ctx(np.eye(4), 0.5 * np.ones(4))
    res = gemm_solve(ctx, 1.0, np.zeros(4), CL)
    assert np.array_equal(res.x, np.ones(4))
    # scalar grid oracle of 0.5 (x - 0.5)^2 - x^2
    g = np.linspace(-1, 1, 20001)
    assert g[np.argmin(0.5 * (g - 0.5) ** 2 - g ** 2)] == 1.0


def test_onebit_2d_matches_grid(rng):
    G = rng.standard_normal((6, 2)) * 1.5
    ctx = onebit_ctx(G)
    res = gemm_solve(ctx, 0.0, np.zeros(2), SolverConfig(inner_tol=1e-12, inner_max_iter=5000))
    g = np.linspace(-1, 1, 401)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    vals = np.array([f_value(ctx, x) for x in X])
    best = X[np.argmin(vals)]
    assert np.max(np.abs(res.x - best)) <= 1e-3 + 1e-12 or f_value(ctx, res.x) <= vals.min() + 1e-12


def test_monotone_descent_every_step(rng):
    for mode, cfg in ((Mode.ONE_BIT, OB), (Mode.CLASSICAL, CL)):
        for seed in range(10):
            inst = synthesize_instance(ChannelSpec(8, 4), 8.0, mode, np.random.default_rng(seed))
            ctx = build_context(inst, cfg.sigma0)
            lam = 0.4 * lipschitz_bound(ctx)
            x0 = rng.uniform(-1, 1, ctx.N)
            res = gemm_solve(ctx, lam, x0, cfg, trace=1000)
            F = [penalized_value(ctx, x0, lam)] + [penalized_value(ctx, x, lam) for x in res.trace]
            assert np.all(np.diff(F) <= 1e-10), (mode, seed)
            assert np.all(np.abs(res.trace) <= 1)


def test_line_search_steps_satisfy_sufficient_descent(rng):
    inst = synthesize_instance(ChannelSpec(12, 4), 10.0, Mode.ONE_BIT, rng)
    ctx = build_context(inst, 0.5)
    res = gemm_solve(ctx, 0.0, rng.uniform(-1, 1, ctx.N), OB, trace=400)
    assert res.line_search_failures == 0
    assert np.all(res.step_params[:, 2] > 0)


def test_homotopy_identity_noise_free():
    x = np.array([1.0, -1.0, -1.0, 1.0])
    ctx = classical_ctx(np.eye(4), x, x)
    out = homotopy_solve(ctx, CL, rng=np.random.default_rng(0))
    assert np.array_equal(out.x_hat, x)
    x_hat, trace = out
    assert np.array_equal(x_hat, x) and trace


def test_homotopy_trace_non_decreasing_and_binary(rng):
    for mode, cfg in ((Mode.ONE_BIT, OB), (Mode.CLASSICAL, CL)):
        for _ in range(10):
            ctx = build_context(synthesize_instance(ChannelSpec(8, 4), 10.0, mode, rng), cfg.sigma0)
            res = homotopy_solve(ctx, cfg, rng=rng)
            lam = [t[0] for t in res.trace]
            assert np.all(np.diff(lam) >= 0)
            assert set(np.unique(res.x_hat)) <= {-1.0, 1.0}
            assert abs(lam[-1] - lam[-2]) <= cfg.lambda_stop_tol if len(lam) > 1 else True


def test_homotopy_trace_csv(rng, tmp_path):
    ctx = build_context(synthesize_instance(ChannelSpec(8, 4), 10.0, Mode.ONE_BIT, rng), OB.sigma0)
    res = homotopy_solve(ctx, OB, rng=rng)
    res.write_trace(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "k,lambda,norm_sq,penalized,inner_iters"
    assert len(lines) == 1 + len(res.trace)
    k, lam, nrm, F, n = lines[-1].split(",")
    assert int(k) == len(res.trace) and float(lam) == res.trace[-1][0] and int(n) == res.trace[-1][3]


def test_homotopy_geometric_stops_at_bound(rng):
    ctx = build_context(synthesize_instance(ChannelSpec(8, 4), 10.0, Mode.ONE_BIT, rng), 0.5)
    cfg = SolverConfig(schedule=Schedule.GEOMETRIC)
    res = homotopy_solve(ctx, cfg, rng=rng)
    lam = [t[0] for t in res.trace]
    assert lam[-1] >= lipschitz_bound(ctx) > lam[-2]
    assert np.allclose(np.array(lam[1:]) / np.array(lam[:-1]), 2.0)


def test_homotopy_counts_phi(rng):
    ctx = build_context(synthesize_instance(ChannelSpec(8, 4), 10.0, Mode.ONE_BIT, rng), 0.5)
    c = OpCounter()
    homotopy_solve(ctx, OB, rng=rng, counter=c)
    assert c.phi_calls > 0 and c.phi_calls % ctx.M == 0


def test_settle_option_changes_first_update(rng):
    ctx = build_context(synthesize_instance(ChannelSpec(8, 8), 10.0, Mode.CLASSICAL, rng))
    x0 = rng.uniform(-1, 1, ctx.N)
    settled = homotopy_solve(ctx, CL, x0=x0)
    literal = homotopy_solve(ctx, SolverConfig.for_mode(Mode.CLASSICAL, settle=False), x0=x0)
    x_box = gemm_solve(ctx, CL.lambda0, x0, CL).x
    assert settled.trace[0][0] == pytest.approx(CL.lambda0 + CL.mu0 * (ctx.N - x_box @ x_box))
    assert literal.trace[0][0] == pytest.approx(CL.lambda0 + CL.mu0 * (ctx.N - x0 @ x0))


def test_nan_instance_raises():
    ctx = onebit_ctx([[np.nan, 1.0], [1.0, 1.0]])
    with pytest.raises(NumericalError):
        gemm_solve(ctx, 0.0, np.zeros(2), OB)


def test_bad_start_rejected():
    ctx = classical_ctx(np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        gemm_solve(ctx, 0.0, np.array([2.0, 0.0]), CL)


# ---- duality oracles

def _small(rng, mode=Mode.ONE_BIT):
    return build_context(synthesize_instance(ChannelSpec(4, 2), 10.0, mode, rng), 0.0)


def test_dual_at_zero_is_convex_minimum(rng):
    ctx = _small(rng)
    x = gemm_solve(ctx, 0.0, np.zeros(4), SolverConfig(inner_tol=1e-12, inner_max_iter=5000)).x
    d0 = dual_value(ctx, 0.0, resolution=81)
    assert f_value(ctx, x) <= d0 + 1e-12
    assert d0 - f_value(ctx, x) < 5e-3


def test_weak_duality(rng):
    for mode in (Mode.ONE_BIT, Mode.CLASSICAL):
        ctx = _small(rng, mode)
        _, f_star = exhaustive_ml(ctx)
        curve = DualCurve(ctx, 41)
        lams = np.linspace(0, 3 * lipschitz_bound(ctx), 300)
        assert np.all(curve(lams) <= f_star + 1e-12)


def test_vertex_matches_grid_above_bound(rng):
    for _ in range(3):
        ctx = _small(rng)
        L = lipschitz_bound(ctx)
        for lam in (L, 1.5 * L):
            assert dual_value(ctx, lam, "vertex") == pytest.approx(dual_value(ctx, lam, "grid", 41), abs=1e-9)


def test_grid_oracle_refuses_large_n(rng):
    ctx = build_context(synthesize_instance(ChannelSpec(4, 7), 10.0, Mode.ONE_BIT, rng), 0.0)
    with pytest.raises(OracleTooLargeError):
        dual_value(ctx, 0.1)
