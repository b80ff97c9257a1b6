import numpy as np
import pytest

from apsing import (
    GridFunction,
    Lambda_map,
    find_positive_delta_nonfold,
    find_regular_nonfold,
    lambda_phi,
    restore_lambda_zero,
    restore_nonfold,
    smooth,
)
from apsing._cache import operator_for
from apsing.errors import JacobianSingularError, NoBracketError, NoConvergenceError
from apsing.sectors import sector_coverage


class TestSmoothing:
    def test_constant_preserved(self, interval199):
        u = GridFunction.constant(2.5, interval199)
        for bc_dom in (interval199,):
            out = smooth(u, 0.02)
            # interior plateau is exact; Dirichlet zero-extension shrinks the
            # boundary cells only
            mid = slice(20, -20)
            assert np.allclose(out.values[mid], 2.5, atol=1e-12)

    def test_neumann_constant_exact(self):
        from apsing import Domain
        dom = Domain("interval", (0.0, 1.0), "neumann", 64)
        u = GridFunction.constant(1.7, dom)
        out = smooth(u, 0.05)
        assert np.allclose(out.values, 1.7, atol=1e-12)

    def test_tiny_sigma_is_identity(self, interval199):
        rng = np.random.default_rng(0)
        u = GridFunction(rng.standard_normal(199), interval199)
        h = interval199.spacings[0]
        out = smooth(u, h / 10.0)
        assert np.allclose(out.values, u.values, atol=1e-12)

    def test_step_convergence_rate(self, interval199):
        # L2 distance of the smoothed step to the step scales like sqrt(sigma)
        x = interval199.coords()
        step = GridFunction(np.where(x < 0.5, 1.0, 3.0), interval199)
        w0 = interval199.cell_measure
        h = interval199.spacings[0]
        dists = []
        for m in (4.0, 16.0):
            out = smooth(step, m * h)
            dists.append(np.sqrt(w0) * np.linalg.norm(out.values - step.values))
        # quadrature oracle: jump magnitude 2, gaussian profile
        for dist, m in zip(dists, (4.0, 16.0)):
            assert dist <= 2.0 * np.sqrt(m * h)
        assert dists[1] / dists[0] == pytest.approx(2.0, rel=0.15)

    def test_mean_preserved_wrapping(self):
        from apsing import Domain
        dom = Domain("interval", (0.0, 1.0), "periodic", 64)
        rng = np.random.default_rng(1)
        u = GridFunction(rng.standard_normal(64), dom)
        out = smooth(u, 0.06)
        assert abs(out.values.mean() - u.values.mean()) < 1e-12

    def test_sup_norm_bounded(self, interval199):
        rng = np.random.default_rng(2)
        u = GridFunction(rng.standard_normal(199), interval199)
        out = smooth(u, 0.03)
        assert np.max(np.abs(out.values)) <= np.max(np.abs(u.values)) + 1e-12


@pytest.fixture(scope="module")
def pipeline_input(interval199, bump_family):
    cand = find_positive_delta_nonfold(bump_family, interval199)
    h = interval199.spacings[0]
    u0 = smooth(cand.potential.realized, 3 * h)
    direction = smooth(GridFunction(cand.potential.coverage.copy(),
                                    interval199), 3 * h)
    return u0, direction


@pytest.fixture(scope="module")
def nonfold_input(interval199, bump_family):
    cand = find_regular_nonfold(bump_family, interval199)
    h = interval199.spacings[0]
    u0 = smooth(cand.potential.realized, 3 * h)
    v1 = smooth(GridFunction(cand.potential.coverage.copy(), interval199),
                3 * h)
    v2 = smooth(GridFunction(1.0 - cand.potential.coverage, interval199),
                3 * h)
    return u0, v1, v2


class TestRestoreLambdaZero:
    def test_pipeline_restoration(self, pipeline_input, interval199, bump_family):
        u0, direction = pipeline_input
        res = restore_lambda_zero(u0, bump_family, direction)
        assert abs(res.lam) <= 1e-9
        assert res.delta > 0
        assert abs(lambda_phi(res.u, bump_family).lam) <= 1e-9

    def test_already_restored_accepts_zero(self, pipeline_input, interval199,
                                           bump_family):
        u0, direction = pipeline_input
        res = restore_lambda_zero(u0, bump_family, direction)
        again = restore_lambda_zero(res.u, bump_family, direction)
        assert again.coefficients[0] == 0.0

    def test_flat_direction_no_bracket(self, interval199, bump_family,
                                       pipeline_input):
        u0, _ = pipeline_input
        # a direction numerically orthogonal to the eigenvalue gradient: the
        # gradient is -f''(u) phi^2, so push along a mode supported where the
        # curvature of the profile vanishes
        fv = lambda_phi(u0, bump_family)
        g = -bump_family.d2(u0.values) * fv.phi.values**2
        rng = np.random.default_rng(3)
        v = rng.standard_normal(199)
        w0 = interval199.cell_measure
        v -= (w0 * float(g @ v) / (w0 * float(g @ g))) * g
        # orthogonalized direction gives near-zero directional derivative;
        # shrink the ball so the quadratic remainder cannot flip the sign
        with pytest.raises((NoBracketError, NoConvergenceError)):
            restore_lambda_zero(u0, bump_family, GridFunction(v, interval199),
                                ball_radius=1e-5)


class TestRestoreNonfold:
    def test_newton_restoration(self, nonfold_input, interval199, bump_family):
        u0, v1, v2 = nonfold_input
        res = restore_nonfold(u0, bump_family, v1, v2)
        assert np.hypot(res.lam, res.delta) <= 1e-8
        assert res.iterations <= 10 or res.fallback_used
        assert res.independence > 1e-6
        lam, dl = Lambda_map(res.u, bump_family)
        assert np.hypot(lam, dl) <= 1e-8
        # the correction stays inside the probe ball
        spread = float(u0.values.max() - u0.values.min())
        assert np.hypot(*res.coefficients) <= 0.2 * max(spread, 1.0) + 1e-12

    def test_second_difference_cap(self, nonfold_input, interval199, bump_family):
        u0, v1, v2 = nonfold_input
        res = restore_nonfold(u0, bump_family, v1, v2)
        h = interval199.spacings[0]
        spread = float(u0.values.max() - u0.values.min())
        assert res.second_diff_max <= spread / (3 * h) ** 2

    def test_already_nonfold_zero_coefficients(self, nonfold_input, interval199,
                                               bump_family):
        u0, v1, v2 = nonfold_input
        res = restore_nonfold(u0, bump_family, v1, v2)
        again = restore_nonfold(res.u, bump_family, v1, v2)
        assert np.hypot(*again.coefficients) < 1e-12

    def test_parallel_probes_rejected(self, nonfold_input, interval199,
                                      bump_family):
        u0, v1, _ = nonfold_input
        with pytest.raises(JacobianSingularError):
            restore_nonfold(u0, bump_family, v1, v1)

    def test_end_to_end_residual_budget(self, interval199, bump_family):
        # the whole smoothing-plus-restoration keeps the pair residual within
        # ten times the two-valued bound
        cand = find_regular_nonfold(bump_family, interval199)
        h = interval199.spacings[0]
        u0 = smooth(cand.potential.realized, 3 * h)
        v1 = smooth(GridFunction(cand.potential.coverage.copy(), interval199), 3 * h)
        v2 = smooth(GridFunction(1.0 - cand.potential.coverage, interval199), 3 * h)
        res = restore_nonfold(u0, bump_family, v1, v2)
        assert np.hypot(res.lam, res.delta) <= 10 * 1e-8
