import itertools

import numpy as np
import pytest
from conftest import classical_ctx

from hotml.baselines import box_relax_detect, box_relax_solve, exhaustive_ml, zf_detect
from hotml.errors import OracleTooLargeError
from hotml.model import ChannelSpec, DetectionInstance, Mode, synthesize_instance
from hotml.objective import build_context, f_value, grad_f
from hotml.solver import SolverConfig, homotopy_solve, project_box


def test_zf_identity():
    inst = DetectionInstance(np.eye(2), np.array([0.2, -0.7]), 0.0, np.array([1.0, -1.0]), Mode.CLASSICAL)
    assert np.array_equal(zf_detect(inst), [1, -1])


def test_zf_noise_free_square(rng):
    H = rng.standard_normal((6, 6))
    x = np.sign(rng.standard_normal(6))
    assert np.array_equal(zf_detect(DetectionInstance(H, H @ x, 0.0, x, Mode.CLASSICAL)), x)


def test_zf_rank_deficient_is_regularized(rng):
    H = rng.standard_normal((6, 3))
    H = np.hstack([H, H[:, :1]])
    diag = {}
    out = zf_detect(DetectionInstance(H, rng.standard_normal(6), 0.1, np.ones(4), Mode.CLASSICAL), diagnostics=diag)
    assert diag.get("zf_regularized") and np.all(np.abs(out) == 1)


def test_exhaustive_n1():
    x, f = exhaustive_ml(classical_ctx([[1.0]], [0.3]))
    assert np.array_equal(x, [1.0]) and f == pytest.approx(0.245)


def test_exhaustive_tie_break():
    # y = 0 with H = I: every vertex has the same objective
    x, _ = exhaustive_ml(classical_ctx(np.eye(3), np.zeros(3)))
    assert np.array_equal(x, [-1, -1, -1])


def _naive(ctx):
    best, fb = None, np.inf
    for bits in itertools.product((-1.0, 1.0), repeat=ctx.N):
        f = f_value(ctx, np.array(bits))
        if f < fb:
            best, fb = np.array(bits), f
    return best, fb


@pytest.mark.parametrize("mode", list(Mode))
def test_gray_code_matches_naive(mode):
    rng = np.random.default_rng(11)
    for _ in range(100):
        ctx = build_context(synthesize_instance(ChannelSpec(5, 3), rng.uniform(0, 15), mode, rng), 0.0)
        x, f = exhaustive_ml(ctx)
        xn, fn = _naive(ctx)
        assert np.array_equal(x, xn)
        assert f == pytest.approx(fn, rel=1e-12, abs=1e-12)


def test_exhaustive_refuses_large_n(rng):
    ctx = build_context(synthesize_instance(ChannelSpec(13, 13), 10.0, Mode.CLASSICAL, rng))
    with pytest.raises(OracleTooLargeError):
        exhaustive_ml(ctx)


def test_ml_lower_bounds_other_detectors(rng):
    for mode in Mode:
        cfg = SolverConfig.for_mode(mode)
        for _ in range(20):
            inst = synthesize_instance(ChannelSpec(6, 3), 6.0, mode, rng)
            ctx = build_context(inst, 0.0)
            _, f_star = exhaustive_ml(ctx)
            for x in (zf_detect(inst), homotopy_solve(ctx, cfg, rng=rng).x_hat, box_relax_detect(ctx, cfg)):
                assert f_star <= f_value(ctx, x) + 1e-12


def test_box_relax_certificate(rng):
    # the solver stops on step length, so tighten it well below the certificate threshold
    for mode in Mode:
        cfg = SolverConfig.for_mode(mode, inner_tol=1e-12, inner_max_iter=100_000)
        for _ in range(5):
            ctx = build_context(synthesize_instance(ChannelSpec(8, 3), 8.0, mode, rng), 0.5)
            x = box_relax_solve(ctx, cfg)
            assert np.linalg.norm(x - project_box(x - grad_f(ctx, x))) < 1e-6


def test_box_relax_noise_free_identity():
    x = np.array([1.0, -1.0, 1.0])
    ctx = classical_ctx(np.eye(3), x, x)
    assert np.array_equal(box_relax_detect(ctx, SolverConfig.for_mode(Mode.CLASSICAL)), x)


def test_noise_free_square_all_detectors_agree(rng):
    H = rng.standard_normal((4, 4))
    x = np.sign(rng.standard_normal(4))
    inst = DetectionInstance(H, H @ x, 0.0, x, Mode.CLASSICAL)
    ctx = build_context(inst)
    assert np.array_equal(exhaustive_ml(ctx)[0], x)
    assert np.array_equal(zf_detect(inst), x)
