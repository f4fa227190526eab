import numpy as np
import pytest
from conftest import classical_ctx, onebit_ctx

from hotml.errors import InvalidInstanceError
from hotml.model import ChannelSpec, DetectionInstance, Mode, synthesize_instance
from hotml.numerics import OpCounter, psi
from hotml.objective import (build_context, f_value, grad_f, grad_majorant, lipschitz_bound, majorant_value,
                             penalized_value)


@pytest.fixture
def ob(rng):
    return build_context(synthesize_instance(ChannelSpec(10, 4), 8.0, Mode.ONE_BIT, rng), 0.5)


@pytest.fixture
def cl(rng):
    return build_context(synthesize_instance(ChannelSpec(6, 4), 8.0, Mode.CLASSICAL, rng))


def test_context_g_rows(rng):
    inst = synthesize_instance(ChannelSpec(5, 2), 6.0, Mode.ONE_BIT, rng)
    ctx = build_context(inst, 0.0)
    assert np.allclose(ctx.G, inst.y[:, None] * inst.H / inst.sigma, rtol=1e-15)
    inst.sigma = 0.5
    ctx = build_context(inst, 0.5)
    assert ctx.sigma_hat == 1.0
    assert np.array_equal(ctx.G, inst.y[:, None] * inst.H)


def test_context_classical_identity():
    ctx = classical_ctx(np.eye(2), [0.1, 0.2])
    assert np.array_equal(ctx.HtH, np.eye(2))
    assert 1.0 <= ctx.spec_norm_sq <= 1.001 + 1e-12  # rounding of the 1.001 factor


def test_context_errors():
    inst = DetectionInstance(np.ones((2, 2)), np.ones(2), 0.0, np.ones(2), Mode.ONE_BIT)
    with pytest.raises(InvalidInstanceError):
        build_context(inst, 0.0)
    inst.sigma = -1.0
    with pytest.raises(InvalidInstanceError):
        build_context(inst, 0.5)
    with pytest.raises(ValueError):
        build_context(inst, -0.1)


def test_f_examples():
    ctx = onebit_ctx(np.ones((7, 3)))
    assert f_value(ctx, np.zeros(3)) == pytest.approx(7 * np.log(2), rel=1e-15)
    ctx = onebit_ctx([[1.0, 0.0]])
    assert f_value(ctx, [1.0, 0.0]) == pytest.approx(0.17275377902345, rel=1e-12)


def test_classical_exact_fit_is_zero(rng):
    H = rng.standard_normal((6, 4))
    x = np.sign(rng.standard_normal(4))
    ctx = classical_ctx(H, H @ x, x)
    assert abs(f_value(ctx, x)) < 1e-12


def test_grad_majorant_examples(ob):
    z = np.random.default_rng(1).uniform(-1, 1, ob.N)
    assert np.array_equal(grad_majorant(ob, np.zeros(ob.N), np.zeros(ob.N), 3.0), grad_f(ob, np.zeros(ob.N)))
    assert np.allclose(grad_majorant(ob, z, z, 0.7), grad_f(ob, z) - 1.4 * z)
    ctx = classical_ctx(np.eye(3), np.zeros(3))
    assert np.allclose(grad_majorant(ctx, [1, 0, 0], [0.3, 0.1, 0], 0.0), [1, 0, 0])


def test_onebit_grad_is_psi_weighted(ob):
    x = np.random.default_rng(2).uniform(-1, 1, ob.N)
    assert np.allclose(grad_f(ob, x), -ob.G.T @ psi(ob.G @ x), rtol=1e-13)


@pytest.mark.parametrize("mode", ["ob", "cl"])
def test_gradient_central_differences(mode, request, rng):
    ctx = request.getfixturevalue(mode)
    h = 1e-5
    for _ in range(100):
        x = rng.uniform(-1, 1, ctx.N)
        fd = np.array([(f_value(ctx, x + h * e) - f_value(ctx, x - h * e)) / (2 * h) for e in np.eye(ctx.N)])
        g = grad_f(ctx, x)
        assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-5


@pytest.mark.parametrize("mode", ["ob", "cl"])
def test_convexity(mode, request, rng):
    ctx = request.getfixturevalue(mode)
    for _ in range(200):
        a, b = rng.uniform(-1, 1, (2, ctx.N))
        assert f_value(ctx, (a + b) / 2) <= (f_value(ctx, a) + f_value(ctx, b)) / 2 + 1e-12


@pytest.mark.parametrize("mode", ["ob", "cl"])
def test_majorant_tangent_and_majorizes(mode, request, rng):
    ctx = request.getfixturevalue(mode)
    for lam in (0.0, 0.3, 5.0):
        for _ in range(100):
            x, xb = rng.uniform(-1, 1, (2, ctx.N))
            assert majorant_value(ctx, xb, xb, lam) == pytest.approx(penalized_value(ctx, xb, lam), abs=1e-12)
            assert majorant_value(ctx, x, xb, lam) >= penalized_value(ctx, x, lam) - 1e-12
    x = rng.uniform(-1, 1, ctx.N)
    assert majorant_value(ctx, x, rng.uniform(-1, 1, ctx.N), 0.0) == f_value(ctx, x)


def test_lipschitz_examples():
    assert lipschitz_bound(classical_ctx(2 * np.eye(3), np.zeros(3))) == pytest.approx(4, rel=1.001e-3)
    assert lipschitz_bound(onebit_ctx([[3.0, 4.0]])) == pytest.approx(25, rel=1.001e-3)
    assert lipschitz_bound(onebit_ctx([[3.0, 4.0]])) >= 25


def test_lipschitz_bounds_hessian(rng):
    inst = synthesize_instance(ChannelSpec(10, 4), 10.0, Mode.ONE_BIT, rng)
    ctx = build_context(inst, 0.0)
    L = lipschitz_bound(ctx)
    for _ in range(100):
        x = rng.uniform(-1, 1, ctx.N)
        t = ctx.G @ x
        p = psi(t)
        Hess = ctx.G.T @ ((p * (p + t))[:, None] * ctx.G)
        assert np.linalg.eigvalsh(Hess)[-1] <= L


def test_spectral_norm_matches_svd(rng):
    for _ in range(20):
        H = rng.standard_normal((12, 7))
        ctx = classical_ctx(H, np.zeros(12))
        s = np.linalg.norm(H, 2) ** 2
        assert s <= ctx.spec_norm_sq <= s * 1.001 * (1 + 1e-8)


def test_counters_charge_phi(ob):
    c = OpCounter()
    grad_majorant(ob, np.zeros(ob.N), np.zeros(ob.N), 0.0, c)
    f_value(ob, np.zeros(ob.N), c)
    assert c.phi_calls == 2 * ob.M
    assert c.flops > 0
