import math

import numpy as np
import pytest

from mscatter import (
    InvalidInputError,
    InvalidRegimeError,
    MatrixDistribution,
    SeededStream,
    SolverConfig,
    SpdMatrix,
    acov_scatter,
    build_kstat,
    estimate_location_scatter,
    fixed_point_solve,
    from_observations,
    gaussian,
    hessian,
    influence_k1,
    influence_kge2,
    location_influence,
    mvn,
    mvt,
    orth_hessian_coeffs,
    spherical_constants,
    t_dist,
    tyler,
)

TIGHT = SolverConfig(tol_fixed_point=1e-13, tol_gradient=1e-12, max_iter=8000)


def planar_design(radii=None, antipodal=False):
    """Six equally spaced planar directions: an exact degree-4 design, so
    direction averages of the quartic Hessian integrands equal their
    rotation-invariant values."""
    ang = np.arange(6) * math.pi / 6.0
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if radii is None:
        pts = dirs
    else:
        pts = np.concatenate([math.sqrt(r) * dirs for r in radii])
    if antipodal:
        pts = np.vstack([pts, -pts])
    return pts


def trace_free_part(x):
    q = len(x)
    return np.outer(x, x) - (x @ x) / q * np.eye(q)


class TestInfluenceK1:
    def test_gaussian_surrogate_identity_hessian(self):
        # With rho' = 1 and rho'' = 0 the operator is the identity once the
        # mean atom is I, so Z(x) = x x^T - I.
        q = MatrixDistribution(np.stack([np.eye(3)]))
        x = np.array([0.5, -1.0, 2.0])
        z = influence_k1(q, gaussian(), x).mat
        assert np.allclose(z, np.outer(x, x) - np.eye(3), atol=1e-12)

    def test_case0_rank_one_spherical_closed_form(self):
        # Z(x) = ((q+2)/|x|^2) A0(x) when the Hessian is q/(q+2) on the
        # trace-free space.
        q = from_observations(planar_design())
        h = hessian(q, tyler(2))
        x = np.array([0.3, -0.8])
        z = influence_k1(q, tyler(2), x, hess=h).mat
        expected = (2 + 2) / (x @ x) * trace_free_part(x)
        assert np.allclose(z, expected, atol=1e-12)
        with pytest.raises(Exception):
            influence_k1(q, tyler(2), np.zeros(2))

    def test_t_spherical_closed_form(self):
        # Standardize an exact-design t problem, then compare against
        # (nu + s)^{-1} (c0 A0(x) + c1 a(x) I).
        nu = 2.0
        pts = planar_design(radii=[0.5, 1.3, 2.6])
        f = t_dist(nu, 2)
        est = fixed_point_solve(from_observations(pts), f, TIGHT)
        assert est.converged
        x_std = pts @ est.sigma.inv_sqrt()
        q_std = from_observations(x_std)
        h = hessian(q_std, f)
        r = np.einsum("ni,ni->n", x_std, x_std)
        sc = spherical_constants(r, nu, 2)
        for i in (0, 7, 11):
            x = x_std[i]
            s = x @ x
            z = influence_k1(q_std, f, x, hess=h).mat
            expected = (sc.c0 * trace_free_part(x) + sc.c1 * (s / 2 - 1) * np.eye(2)) / (nu + s)
            assert np.max(np.abs(z - expected)) <= 1e-10

    def test_case0_result_is_trace_free(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((20, 3))
        f = tyler(3)
        est = fixed_point_solve(from_observations(x), f, TIGHT)
        x_std = x @ est.sigma.inv_sqrt()
        q_std = from_observations(x_std)
        z = influence_k1(q_std, f, x_std[3]).mat
        assert abs(np.trace(z)) <= 1e-12


class TestInfluenceKge2:
    def test_centering_telescopes_with_full_enumeration(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((30, 2))
        f = t_dist(2.0, 2)
        q2 = build_kstat(x, 2, cap=10_000)
        est = fixed_point_solve(q2, f, TIGHT)
        assert est.converged
        x_std = x @ est.sigma.inv_sqrt()
        q_std = build_kstat(x_std, 2, cap=10_000)
        h = hessian(q_std, f)
        total = np.zeros((2, 2))
        for i in range(30):
            total += influence_kge2(
                x_std, f, 2, x_std[i], inner_cap=10_000, hess=h, exclude=i
            ).mat
        assert np.linalg.norm(total / 30) <= 1e-6

    def test_case0_spherical_structure(self):
        # For spherical data the order-2 influence is z0(s) x x^T + z1(s) I
        # with z1 = -s z0 / q under the scale-invariant loss: trace-free and
        # proportional to A0(x).
        x = mvn(np.zeros(2), SpdMatrix(np.eye(2)), 4000, SeededStream(2))
        f = tyler(2)
        q2 = build_kstat(x, 2, cap=20_000, seed=3)
        est = fixed_point_solve(q2, f, SolverConfig(tol_fixed_point=1e-12, max_iter=2000))
        assert est.converged
        x_std = x @ est.sigma.inv_sqrt()
        q_std = build_kstat(x_std, 2, cap=20_000, seed=3)
        h = hessian(q_std, f)
        rng = np.random.default_rng(4)
        for _ in range(3):
            point = rng.standard_normal(2) * 1.5
            z = influence_kge2(x_std, f, 2, point, inner_cap=3000, seed=5, hess=h).mat
            assert abs(np.trace(z)) <= 1e-10
            a0 = trace_free_part(point)
            a0 /= np.linalg.norm(a0)
            coef = float(np.sum(z * a0))
            resid = np.linalg.norm(z - coef * a0) / np.linalg.norm(z)
            assert resid <= 0.15

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((60, 2))
        f = t_dist(3.0, 2)
        q2 = build_kstat(x, 2, cap=500, seed=7)
        h = hessian(q2, f)
        point = np.array([0.4, 1.1])
        a = influence_kge2(x, f, 2, point, inner_cap=20, seed=8, hess=h).mat
        b = influence_kge2(x, f, 2, point, inner_cap=20, seed=8, hess=h).mat
        c = influence_kge2(x, f, 2, point, inner_cap=20, seed=9, hess=h).mat
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestSphericalConstants:
    def test_nu_zero_values(self):
        sc = spherical_constants([1.0, 2.0, 3.0], 0.0, 3)
        assert sc.kappa == 0.0
        assert sc.c1 == 0.0
        assert sc.c0 == pytest.approx(5.0)  # q + 2
        assert sc.d1 == pytest.approx(0.0)
        assert sc.d0 == pytest.approx(3.0 / 5.0)

    def test_point_mass_kappa(self):
        sc = spherical_constants([2.0], 1.0, 2)
        assert sc.kappa == pytest.approx(1.0 / 3.0)

    def test_kappa_against_quadrature_oracle(self):
        from scipy.integrate import quad
        from scipy.stats import chi2

        nu, q = 3.0, 3
        r2 = np.sum(mvn(np.zeros(q), SpdMatrix(np.eye(q)), 100_000, SeededStream(10)) ** 2, axis=1)
        sc = spherical_constants(r2, nu, q)
        oracle, _ = quad(lambda s: (nu + q) * nu / (nu + s) ** 2 * chi2.pdf(s, q), 0, np.inf)
        assert sc.kappa == pytest.approx(oracle, rel=0.01)

    def test_invalid_regime_mass_at_zero(self):
        # kappa = (nu + q)/nu > 1 for a point mass at radius 0.
        with pytest.raises(InvalidRegimeError):
            spherical_constants([0.0], 1.0, 2)

    def test_c2_none_for_nu_zero_in_two_dims(self):
        sc = spherical_constants([1.0, 4.0], 0.0, 2)
        assert sc.c2 is None

    def test_c2_invalid_regime_for_positive_nu(self):
        # Huge radii push kappa to 0, so q - 2(1 - kappa) -> 0- for q = 2.
        with pytest.raises(InvalidRegimeError):
            spherical_constants([1e12], 1.0, 2)

    def test_weights_respected(self):
        a = spherical_constants([1.0, 5.0], 2.0, 3, weights=[0.5, 0.5])
        b = spherical_constants([1.0, 1.0, 5.0, 5.0], 2.0, 3)
        assert a.kappa == pytest.approx(b.kappa)


class TestOrthHessianCoeffs:
    def test_case0_d1_vanishes(self):
        rng = np.random.default_rng(11)
        q = from_observations(rng.standard_normal((15, 3)))
        d0, d1 = orth_hessian_coeffs(q, tyler(3))
        assert d1 == pytest.approx(0.0, abs=1e-12)

    def test_case0_rank_one_d0(self):
        q = from_observations(planar_design())
        d0, d1 = orth_hessian_coeffs(q, tyler(2))
        assert d0 == pytest.approx(2.0 / 4.0)

    def test_matches_materialized_hessian_on_design(self):
        nu = 2.0
        pts = planar_design(radii=[0.5, 1.3, 2.6])
        f = t_dist(nu, 2)
        est = fixed_point_solve(from_observations(pts), f, TIGHT)
        x_std = pts @ est.sigma.inv_sqrt()
        q_std = from_observations(x_std)
        d0, d1 = orth_hessian_coeffs(q_std, f)
        sc = spherical_constants(np.einsum("ni,ni->n", x_std, x_std), nu, 2)
        assert d0 == pytest.approx(sc.d0, abs=1e-12)
        assert d1 == pytest.approx(sc.d1, abs=1e-12)
        h = hessian(q_std, f)
        rng = np.random.default_rng(12)
        a = rng.standard_normal((2, 2))
        a = (a + a.T) / 2.0
        a0 = a - np.trace(a) / 2.0 * np.eye(2)
        assert np.allclose(h.apply(a0), d0 * a0, atol=1e-8)
        assert np.allclose(h.apply(np.eye(2)), d1 * np.eye(2), atol=1e-8)

    def test_needs_two_dims(self):
        q = MatrixDistribution(np.ones((1, 1, 1)))
        with pytest.raises(InvalidInputError):
            orth_hessian_coeffs(q, tyler(1))


class TestAcovScatter:
    def test_design_closed_form_consistency(self):
        # Case 0 influence depends only on direction; on design data the
        # computed influence matrices must equal the closed form exactly.
        pts = planar_design(radii=[1.0, 2.0])
        f = tyler(2)
        est = fixed_point_solve(from_observations(pts), f, TIGHT)
        rep = acov_scatter(pts, est, f)
        x_std = pts @ est.sigma.inv_sqrt()
        for i in range(len(pts)):
            x = x_std[i]
            expected = 4.0 / (x @ x) * trace_free_part(x)
            assert np.max(np.abs(rep.influence[i] - expected)) <= 1e-9

    def test_centering_residual_small(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((50, 3))
        f = t_dist(3.0, 3)
        est = fixed_point_solve(from_observations(x), f, TIGHT)
        rep = acov_scatter(x, est, f)
        assert rep.centering_residual <= 1e-8

    def test_report_shapes(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((40, 3))
        f = t_dist(2.0, 3)
        est = fixed_point_solve(from_observations(x), f, TIGHT)
        rep = acov_scatter(x, est, f)
        p = 3 * 4 // 2
        assert rep.influence.shape == (40, 3, 3)
        assert rep.acov.shape == (p, p)
        assert rep.se_sigma.shape == (3, 3)
        assert rep.se_mu is None
        assert np.all(np.linalg.eigvalsh((rep.acov + rep.acov.T) / 2) >= -1e-10)

    def test_congruence_equivariance(self):
        # Transforming the data by B maps the original-coordinate influence
        # matrices to B Z B^T exactly.
        rng = np.random.default_rng(15)
        x = rng.standard_normal((30, 2))
        f = t_dist(2.0, 2)
        b = np.array([[2.0, 0.5], [0.0, 1.0]])
        est1 = fixed_point_solve(from_observations(x), f, TIGHT)
        rep1 = acov_scatter(x, est1, f)
        est2 = fixed_point_solve(from_observations(x @ b.T), f, TIGHT)
        rep2 = acov_scatter(x @ b.T, est2, f)
        root1 = est1.sigma.sqrt()
        root2 = est2.sigma.sqrt()
        z1 = np.einsum("ij,njk,kl->nil", root1, rep1.influence, root1)
        z2 = np.einsum("ij,njk,kl->nil", root2, rep2.influence, root2)
        assert np.max(np.abs(z2 - np.einsum("ij,njk,lk->nil", b, z1, b))) <= 1e-7

    def test_k2_report(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((25, 2))
        f = tyler(2)
        q2 = build_kstat(x, 2, cap=1000)
        est = fixed_point_solve(q2, f, TIGHT)
        rep = acov_scatter(x, est, f, k=2, inner_cap=1000)
        assert rep.k == 2
        assert rep.plugin_inner
        assert rep.centering_residual <= 1e-6

    def test_requires_convergence(self):
        x = np.eye(2)
        est = fixed_point_solve(from_observations(x), tyler(2))
        with pytest.raises(InvalidInputError):
            acov_scatter(x, est, tyler(2))


class TestLocationInfluence:
    def test_spherical_closed_form(self):
        # The corrected augmented influence of spherical data is
        # (nu+s)^{-1} [[c0 A0 + c1 a I, (nu+q) c2 x], [(nu+q) c2 x^T, 0]].
        # The (nu+q) factor on the location block is required for the
        # Hessian block action to cancel (and is confirmed by Monte Carlo
        # variance of the fitted center).
        for nu in (1.0, 2.0):
            pts = planar_design(radii=[0.5, 1.3, 2.6], antipodal=True)
            est = estimate_location_scatter(pts, nu, TIGHT)
            assert est.converged
            rep = location_influence(pts, nu, est)
            x_std = (pts - est.mu) @ est.sigma.inv_sqrt()
            r = np.einsum("ni,ni->n", x_std, x_std)
            sc = spherical_constants(r, nu, 2)
            for i in (0, 5, 17):
                x = x_std[i]
                s = x @ x
                expected = np.zeros((3, 3))
                expected[:2, :2] = sc.c0 * trace_free_part(x) + sc.c1 * (s / 2 - 1) * np.eye(2)
                expected[:2, 2] = (nu + 2) * sc.c2 * x
                expected[2, :2] = (nu + 2) * sc.c2 * x
                expected /= nu + s
                assert np.max(np.abs(rep.influence[i] - expected)) <= 1e-9

    def test_corner_zero_after_nu1_correction(self):
        pts = planar_design(radii=[0.7, 1.9], antipodal=True)
        est = estimate_location_scatter(pts, 1.0, TIGHT)
        rep = location_influence(pts, 1.0, est)
        assert np.max(np.abs(rep.influence[:, -1, -1])) <= 1e-12

    def test_block_parity_for_symmetric_data(self):
        # With data closed under x -> -x the scatter/corner blocks are even
        # in x and the location block is odd.
        rng = np.random.default_rng(17)
        half = rng.standard_normal((12, 2))
        x = np.vstack([half, -half])
        est = estimate_location_scatter(x, 2.0, TIGHT)
        rep = location_influence(x, 2.0, est)
        n = len(half)
        for i in range(n):
            zp, zm = rep.influence[i], rep.influence[n + i]
            assert np.max(np.abs(zp[:2, :2] - zm[:2, :2])) <= 1e-9
            assert abs(zp[2, 2] - zm[2, 2]) <= 1e-9
            assert np.max(np.abs(zp[:2, 2] + zm[:2, 2])) <= 1e-9

    def test_centering_and_se_shapes(self):
        x = mvt(np.array([1.0, -2.0]), SpdMatrix(np.diag([2.0, 1.0])), 3.0, 100,
                SeededStream(18))
        est = estimate_location_scatter(x, 3.0, TIGHT)
        rep = location_influence(x, 3.0, est)
        assert rep.centering_residual <= 1e-8
        assert rep.se_mu.shape == (2,)
        assert rep.se_sigma.shape == (2, 2)
        assert np.all(rep.se_mu > 0)

    def test_location_variance_against_monte_carlo(self):
        # 200 replications of the fitted center; its variance must match the
        # influence prediction within Monte Carlo tolerance.
        nu, q, n = 3.0, 2, 300
        cfg = SolverConfig(tol_fixed_point=1e-11, max_iter=2000)
        stream = SeededStream(19)
        mus = []
        for _ in range(200):
            x = mvt(np.zeros(q), SpdMatrix(np.eye(q)), nu, n, stream)
            mus.append(estimate_location_scatter(x, nu, cfg).mu)
        mus = np.asarray(mus)
        emp = n * mus.var(axis=0).mean()

        xref = mvt(np.zeros(q), SpdMatrix(np.eye(q)), nu, 20_000, SeededStream(20))
        est = estimate_location_scatter(xref, nu, cfg)
        rep = location_influence(xref, nu, est)
        predicted = float(np.mean(rep.influence[:, :q, q] ** 2))
        assert emp == pytest.approx(predicted, rel=0.2)
