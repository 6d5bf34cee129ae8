import numpy as np
import pytest
from scipy import integrate

from errors import DomainError, FixtureError
from oracle import (
    a_matrix,
    build_world,
    default_theta_star,
    f_theta,
    lowrank_omega,
    mnl_moment_check,
    mu_direct,
    mu_via_lowrank,
    mu_via_means,
    mu_via_psi,
    omega_matrix,
    run_oracle_suite,
    sample_mnl_world,
    world_checks,
    world_from_parts,
)
from numlin import pseudo_inverse


def _nested_loop_mu(world, xi, g):
    num = den = 0.0
    for l in range(world.K):
        weight = world.pi_l[l] * world.pg_given_l[l, g] * world.px_given_l[l, xi]
        num += weight * world.m_yl[xi, l]
        den += weight
    return num / den


def _small_world(pg_given_l, px_given_l=None):
    pg_given_l = np.asarray(pg_given_l, dtype=float)
    k = pg_given_l.shape[0]
    if px_given_l is None:
        px_given_l = np.array([[0.6, 0.3, 0.1], [0.2, 0.3, 0.5]])[:k]
    return world_from_parts(
        pi_l=np.full(k, 1.0 / k),
        pg_given_l=pg_given_l,
        x_support=np.array([[0.0, 1.0], [1.0, -1.0], [2.0, 0.5]]),
        px_given_l=px_given_l,
        m_yl=np.array([[1.0, -1.0], [0.5, 2.0], [-3.0, 0.25]])[:, :k],
    )


class TestWorld:
    def test_pmfs_sum_to_one(self, rng):
        world = build_world(3, 7, 3, 6, rng)
        np.testing.assert_allclose(world.pi_l.sum(), 1.0, atol=1e-12)
        np.testing.assert_allclose(world.pg.sum(), 1.0, atol=1e-12)
        np.testing.assert_allclose(world.psi.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(world.px_given_l.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(world.psi >= 0)

    def test_a_is_left_invertible(self, rng):
        world = build_world(3, 5, 4, 5, rng)
        a = a_matrix(world)
        assert a.shape == (4, 3)
        assert np.linalg.svd(a, compute_uv=False)[-1] > 1e-6

    def test_single_latent_level(self, rng):
        world = build_world(1, 4, 1, 4, rng)
        np.testing.assert_allclose(world.psi, np.ones((1, 4)), atol=1e-15)

    def test_omega_factorizes(self, rng):
        world = build_world(2, 6, 2, 5, rng)
        np.testing.assert_allclose(omega_matrix(world), a_matrix(world) @ world.psi, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("K, p, support", [(3, 2, 5), (3, 3, 2)])
    def test_fixture_preconditions(self, rng, K, p, support):
        with pytest.raises(FixtureError):
            build_world(K, 4, p, support, rng)


class TestConditionalMean:
    def test_single_level_is_outcome_table(self, rng):
        world = build_world(1, 3, 1, 4, rng)
        for xi in range(4):
            for g in range(3):
                assert mu_direct(world, xi, g) == pytest.approx(world.m_yl[xi, 0], abs=1e-14)
                assert mu_via_means(world, xi, g) == pytest.approx(world.m_yl[xi, 0], abs=1e-10)
        np.testing.assert_allclose(pseudo_inverse(a_matrix(world)) @ omega_matrix(world), 1.0, atol=1e-10)

    def test_point_mass_column(self):
        world = _small_world([[0.5, 0.5, 0.0], [0.0, 0.3, 0.7]])
        np.testing.assert_array_equal(world.psi[:, 0], [1.0, 0.0])
        for xi in range(3):
            assert mu_direct(world, xi, 0) == pytest.approx(world.m_yl[xi, 0], abs=1e-14)
            assert mu_via_psi(world, xi, 0) == pytest.approx(world.m_yl[xi, 0], abs=1e-14)

    def test_matches_nested_loop_enumeration(self, rng):
        world = build_world(3, 6, 3, 5, rng)
        for xi in range(world.support_size):
            for g in range(world.M):
                expected = _nested_loop_mu(world, xi, g)
                assert mu_direct(world, xi, g) == pytest.approx(expected, abs=1e-12)
                assert mu_via_psi(world, xi, g) == pytest.approx(expected, abs=1e-10)
                assert mu_via_means(world, xi, g) == pytest.approx(expected, abs=1e-8)
                assert mu_via_lowrank(world, xi, g) == pytest.approx(expected, abs=1e-8)

    def test_accepts_support_point_vectors(self, rng):
        world = build_world(2, 3, 2, 4, rng)
        assert mu_direct(world, world.x_support[2], 1) == mu_direct(world, 2, 1)

    def test_identical_psi_columns_give_identical_means(self):
        world = _small_world([[0.1, 0.2, 0.7], [0.2, 0.4, 0.4]])
        np.testing.assert_allclose(world.psi[:, 0], world.psi[:, 1], atol=1e-15)
        for xi in range(3):
            assert mu_direct(world, xi, 0) == pytest.approx(mu_direct(world, xi, 1), abs=1e-14)

    def test_lowrank_reconstructs_group_means(self, rng):
        world = build_world(3, 9, 3, 6, rng)
        np.testing.assert_allclose(lowrank_omega(world), omega_matrix(world), atol=1e-10)

    def test_constant_psi_gives_constant_lowrank_means(self):
        world = _small_world([[0.25, 0.25, 0.25, 0.25]])
        values = [mu_via_lowrank(world, 1, g) for g in range(4)]
        np.testing.assert_allclose(values, values[0], atol=1e-12)

    def test_unknown_support_point(self, rng):
        world = build_world(2, 3, 2, 4, rng)
        with pytest.raises(DomainError):
            mu_direct(world, np.array([99.0, 99.0]), 0)
        with pytest.raises(DomainError):
            mu_direct(world, 4, 0)

    def test_zero_probability_event(self):
        world = _small_world([[0.5, 0.5], [0.2, 0.8]], px_given_l=[[0.5, 0.5, 0.0], [0.3, 0.7, 0.0]])
        with pytest.raises(DomainError):
            mu_direct(world, 2, 0)
        with pytest.raises(DomainError):
            mu_via_psi(world, 2, 0)

    def test_rank_deficient_latent_means(self):
        world = _small_world([[0.5, 0.5], [0.2, 0.8]], px_given_l=[[0.2, 0.3, 0.5], [0.2, 0.3, 0.5]])
        with pytest.raises(DomainError):
            mu_via_means(world, 0, 0)
        with pytest.raises(DomainError):
            mu_via_lowrank(world, 0, 0)


class TestIdentitySuite:
    def test_fifty_random_worlds(self):
        rng = np.random.default_rng(42)
        worst = {}
        for i in range(50):
            K = (1, 2, 3, 5)[i % 4]
            M = int(rng.integers(K, 4 * K + 1))
            support = int(rng.integers(max(4, K), 9))
            for row in world_checks(build_world(K, M, K, support, rng)):
                worst[row.name] = max(worst.get(row.name, 0.0), row.max_error)
        assert worst["omega = A psi"] <= 1e-12
        assert worst["mu_via_psi vs direct"] <= 1e-10
        assert worst["mu_via_means vs direct"] <= 1e-8
        assert worst["mu_via_lowrank vs direct"] <= 1e-8

    def test_suite_rows_without_logit_check(self):
        rows = run_oracle_suite(K=2, M=5, support_size=4, seed=3, worlds=4, mnl_n=0)
        assert len(rows) == 7
        assert all(row.passed for row in rows)

    def test_suite_is_seeded(self):
        a = run_oracle_suite(K=3, M=6, support_size=5, seed=1, worlds=2, mnl_n=0)
        b = run_oracle_suite(K=3, M=6, support_size=5, seed=1, worlds=2, mnl_n=0)
        assert a == b

    def test_suite_with_logit_check(self):
        rows = run_oracle_suite(K=2, M=4, support_size=4, seed=0)
        assert rows[-1].name == "f(theta_g) = omega(g), n=100000"
        assert all(row.passed for row in rows)


class TestMnlMoments:
    def test_sampled_categories_are_populated(self, rng):
        x, g, _ = sample_mnl_world(default_theta_star(), 500, rng)
        assert x.shape == (500, 3)
        assert np.all(np.bincount(g, minlength=4) > 0)

    def test_uniform_logit(self, rng):
        report = mnl_moment_check(np.zeros((4, 4)), 20_000, rng)
        assert report.converged
        assert report.out_of_sample_discrepancy <= 0.1
        assert report.in_sample_discrepancy <= 1e-4

    def test_binary_logit_matches_quadrature(self, rng):
        theta = np.array([[0.5, 1.2], [0.0, 0.0]])
        n = 100_000
        x = rng.standard_normal((n, 1))
        mc = f_theta(theta, x)[0, 0]

        def lam(t):
            return 1.0 / (1.0 + np.exp(-(0.5 + 1.2 * t)))

        def density(t):
            return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)

        num, _ = integrate.quad(lambda t: t * lam(t) * density(t), -np.inf, np.inf)
        den, _ = integrate.quad(lambda t: lam(t) * density(t), -np.inf, np.inf)
        exact = num / den

        w = lam(x[:, 0])
        se = np.std((x[:, 0] - exact) * w) / (w.mean() * np.sqrt(n))
        assert abs(mc - exact) <= 3 * se

    def test_discrepancy_shrinks_with_sample_size(self):
        theta = default_theta_star(4, 3)
        small = mnl_moment_check(theta, 10_000, np.random.default_rng(7))
        large = mnl_moment_check(theta, 100_000, np.random.default_rng(8))
        assert large.out_of_sample_discrepancy <= 0.05
        assert small.out_of_sample_discrepancy > large.out_of_sample_discrepancy
        assert large.discrepancy.shape == (4, 3)
