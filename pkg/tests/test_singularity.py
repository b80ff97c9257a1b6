import numpy as np
import pytest

from apsing import (
    GridFunction,
    classify_critical_point,
    construct_poly_clamped,
    cusp_certificate,
    detect_collapsing_fiber,
    fiber_critical_points,
    four_preimage_certificate,
    newton_preimages,
    three_preimage_certificate,
    trace_fiber,
)
from apsing._cache import free_modes, operator_for
from apsing.errors import OutOfDomainError, StageFailureError
from apsing.singularity import collapse_flags_from_samples


@pytest.fixture(scope="module")
def wiggle_cusp(interval199, wiggle_family):
    return cusp_certificate(wiggle_family, interval199, k=1, seed=3)


class TestClassification:
    def test_convex_fold(self, interval199, convex_family):
        z = GridFunction(np.zeros(interval199.num_nodes), interval199)
        trace = trace_fiber(z, -4.0, 4.0, convex_family)
        (t_c, pt), = fiber_critical_points(trace, convex_family)
        cert = classify_critical_point(pt.u, convex_family)
        assert cert.kind == "Fold"
        assert cert.delta < 0

    def test_cusp_kind_with_negative_tau(self, wiggle_cusp, wiggle_family):
        assert wiggle_cusp.kind == "Cusp"
        assert abs(wiggle_cusp.lam) <= 1e-8
        assert abs(wiggle_cusp.delta) <= 1e-8
        assert abs(wiggle_cusp.tau_value) > 1e-6
        assert wiggle_cusp.independence > 1e-6
        # both crossing plateaus have nonnegative third derivative, which
        # forces a strictly negative transversality number
        assert wiggle_cusp.tau_value < 0

    def test_manufactured_collapsing_kind(self, interval199, mu12):
        # constant slope pinned at the ground eigenvalue with zero curvature:
        # every functional vanishes and the probe matrix is singular
        f_flat = construct_poly_clamped(mu12[0], [0.0], center=0.0, scale=1.0)
        u = GridFunction.constant(0.0, interval199)
        cert = classify_critical_point(u, f_flat)
        assert cert.kind == "Degenerate"

    def test_noncritical_rejected(self, interval199, bump_family):
        u = GridFunction.constant(-4.0, interval199)
        with pytest.raises(OutOfDomainError):
            classify_critical_point(u, bump_family)


class TestNewtonPreimages:
    def test_linear_unique_solution_matches_dense(self, interval199, op199):
        f_lin = construct_poly_clamped(4.0, [0.0], center=0.0, scale=1.0)
        rng = np.random.default_rng(0)
        y = GridFunction(rng.standard_normal(interval199.num_nodes), interval199)
        inits = [np.zeros(interval199.num_nodes),
                 rng.standard_normal(interval199.num_nodes)]
        cert = newton_preimages(y, inits, f_lin)
        assert cert.count == 1
        # dense affine oracle: (A - 4 I) u = y + f(0)
        n = interval199.num_nodes
        T = op199.matrix.toarray() - 4.0 * np.eye(n)
        u_ref = np.linalg.solve(T, y.values + float(f_lin.value(0.0)))
        err = np.linalg.norm(cert.solutions[0].values - u_ref)
        assert err * np.sqrt(op199.w0) < 1e-7

    def test_convex_two_preimages(self, interval199, convex_family, psi1):
        z = GridFunction(np.zeros(interval199.num_nodes), interval199)
        trace = trace_fiber(z, -4.0, 4.0, convex_family, compute_lambda=False)
        level = trace.heights.max() - 5.0
        y = GridFunction(level * psi1.values, interval199)
        rng = np.random.default_rng(1)
        inits = [t * psi1.values for t in np.linspace(-4, 4, 9)]
        inits += [rng.standard_normal(interval199.num_nodes) for _ in range(4)]
        cert = newton_preimages(y, inits, convex_family)
        assert cert.count == 2
        assert all(r <= 1e-8 for r in cert.residuals)

    def test_deduplication_threshold(self, interval199, convex_family, psi1):
        z = GridFunction(np.zeros(interval199.num_nodes), interval199)
        trace = trace_fiber(z, -4.0, 4.0, convex_family, compute_lambda=False)
        level = trace.heights.max() - 5.0
        y = GridFunction(level * psi1.values, interval199)
        inits = [t * psi1.values for t in np.linspace(-4, 4, 30)]
        cert = newton_preimages(y, inits, convex_family)
        assert cert.count == 2
        assert cert.pairwise_min_distance >= cert.separation_threshold


@pytest.fixture(scope="module")
def certificate(interval199, bump_family):
    return four_preimage_certificate(bump_family, interval199, seed=7)


class TestFourPreimages:
    def test_four_distinct_solutions(self, certificate):
        assert certificate.count >= 4
        assert all(r <= 1e-8 for r in certificate.residuals)
        assert certificate.pairwise_min_distance >= certificate.separation_threshold

    def test_solutions_share_fiber(self, certificate, interval199, bump_family,
                                   psi1):
        L = operator_for(interval199)
        w0 = L.w0
        zs = []
        for sol in certificate.solutions:
            g = L.apply(sol.values) - bump_family.value(sol.values)
            z = g - (w0 * float(g @ psi1.values)) * psi1.values
            zs.append(z)
        for z in zs[1:]:
            assert np.sqrt(w0) * np.linalg.norm(z - zs[0]) <= 1e-7

    def test_level_flanked_by_maxima(self, certificate):
        h0 = certificate.meta["h_min"]
        h1, h2 = certificate.meta["h_flank"]
        assert h0 < certificate.h_star < min(h1, h2)

    def test_convex_family_stage_failure(self, interval199, convex_family):
        with pytest.raises(StageFailureError):
            four_preimage_certificate(convex_family, interval199, seed=0)

    def test_solutions_solve_equation(self, certificate, interval199,
                                      bump_family):
        L = operator_for(interval199)
        w0 = L.w0
        for sol in certificate.solutions:
            r = L.apply(sol.values) - bump_family.value(sol.values) \
                - certificate.y.values
            assert np.sqrt(w0) * np.linalg.norm(r) <= 1e-8


class TestCuspCensus:
    def test_census_one_and_three(self, wiggle_cusp):
        counts = [c for _, c in wiggle_cusp.local_counts]
        assert 1 in counts and 3 in counts
        neg = [c for s, c in wiggle_cusp.local_counts if s < 0]
        pos = [c for s, c in wiggle_cusp.local_counts if s > 0]
        # one side is single-valued, the other carries the triple
        assert (all(c == 1 for c in neg) and all(c == 3 for c in pos)) or \
               (all(c == 3 for c in neg) and all(c == 1 for c in pos))

    def test_regular_route_census(self, interval199, bump_family):
        cert = cusp_certificate(bump_family, interval199, k=1, route="regular",
                                seed=11)
        assert cert.kind == "Cusp"
        counts = [c for _, c in cert.local_counts]
        assert 1 in counts and 3 in counts

    def test_three_preimages_from_cusp(self, interval199, wiggle_family,
                                       wiggle_cusp):
        pre = three_preimage_certificate(wiggle_family, interval199, k=1,
                                         seed=3, cert=wiggle_cusp)
        assert pre.count >= 3
        assert all(r <= 1e-8 for r in pre.residuals)

    def test_convex_has_no_cusp(self, interval199, convex_family):
        with pytest.raises(StageFailureError):
            cusp_certificate(convex_family, interval199, k=1, seed=0)

    def test_certificate_roundtrip(self, wiggle_cusp, interval199, wiggle_family):
        from apsing.cli import recheck_report
        report = {
            "domain": interval199.to_dict(),
            "nonlinearity": wiggle_family.to_dict(),
            "results": {"certificate": wiggle_cusp.to_dict()},
        }
        out = recheck_report(report)
        assert out["valid"]


class TestCollapseDetector:
    def test_synthetic_constant_trace_flags(self):
        report = collapse_flags_from_samples([2.0] * 30, [0.0] * 30)
        assert report["flagged"]

    def test_synthetic_varying_trace_not_flagged(self):
        hs = np.linspace(0, 1, 30)
        report = collapse_flags_from_samples(hs, np.zeros(30))
        assert not report["flagged"]

    def test_pipeline_nonfold_not_flagged(self, interval199, wiggle_family,
                                          wiggle_cusp):
        report = detect_collapsing_fiber(wiggle_cusp.u, wiggle_family)
        assert not report["flagged"]
        assert report["h_variation"] > 1e-3

    def test_precondition(self, interval199, bump_family):
        with pytest.raises(OutOfDomainError):
            detect_collapsing_fiber(GridFunction.constant(0.0, interval199),
                                    bump_family)


def test_three_preimages_requires_cusp(interval199, convex_family):
    # hand the polisher a fold certificate: precondition must fail
    z = GridFunction(np.zeros(interval199.num_nodes), interval199)
    trace = trace_fiber(z, -4.0, 4.0, convex_family)
    (_, pt), = fiber_critical_points(trace, convex_family)
    fold = classify_critical_point(pt.u, convex_family)
    with pytest.raises(OutOfDomainError):
        three_preimage_certificate(convex_family, interval199, cert=fold)


def test_cusp_certificate_second_mode(interval199):
    from apsing import construct_wiggle
    mu2 = free_modes(interval199, 2)[1][0]
    f = construct_wiggle(mu2, 60.0, 0.0, 1.0)
    cert = cusp_certificate(f, interval199, k=2, route="hk", seed=5)
    assert cert.kind == "Cusp"
    assert abs(cert.lam) <= 1e-8 and abs(cert.delta) <= 1e-8
    assert abs(cert.tau_value) > 1e-6
    assert cert.local_counts == []          # census is a ground-mode tool
