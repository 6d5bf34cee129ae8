import json
from dataclasses import replace

import numpy as np
import pytest

import dgp_sim
from dataset import split_rows
from dgp_sim import (
    SimConfig,
    SimParams,
    ar_covariance,
    compose,
    draw_covariates,
    draw_groups,
    draw_latent,
    draw_params,
    gen_outcome,
    group_probabilities,
    simulate,
    substreams,
    write_params,
)
from errors import ConfigurationError


class TestSimConfig:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"num_groups": 21, "num_latent": 2},
            {"p_assign": 0.5},
            {"p_assign": 1.2},
            {"p": 2},
            {"setup": "quadratic"},
            {"n": 0},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigurationError):
            replace(SimConfig(), **overrides).validate()


class TestDraws:
    def test_single_latent_level(self, rng):
        assert np.all(draw_latent(SimConfig(num_latent=1, num_groups=5), rng) == 0)

    def test_latent_frequencies(self, rng):
        cfg = SimConfig(n=100_000, num_latent=4, num_groups=8)
        counts = np.bincount(draw_latent(cfg, rng), minlength=4) / cfg.n
        se = np.sqrt(0.25 * 0.75 / cfg.n)
        assert np.all(np.abs(counts - 0.25) <= 4 * se)

    def test_latent_seeded(self):
        cfg = SimConfig(n=50)
        a = draw_latent(cfg, np.random.default_rng(3))
        b = draw_latent(cfg, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_group_probabilities(self):
        probs = group_probabilities(SimConfig(num_latent=2, num_groups=4, p_assign=0.9))
        np.testing.assert_allclose(probs[0], [0.45, 0.45, 0.05, 0.05])
        np.testing.assert_allclose(probs[1], [0.05, 0.05, 0.45, 0.45])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-15)

    def test_group_frequencies(self, rng):
        cfg = SimConfig(n=100_000, num_latent=2, num_groups=4, p_assign=0.9)
        latent = np.zeros(cfg.n, dtype=int)
        freq = np.bincount(draw_groups(latent, cfg, rng), minlength=4) / cfg.n
        expected = np.array([0.45, 0.45, 0.05, 0.05])
        se = np.sqrt(expected * (1 - expected) / cfg.n)
        assert np.all(np.abs(freq - expected) <= 4 * se)

    def test_p_assign_one_keeps_block(self, rng):
        cfg = SimConfig(n=2000, num_latent=4, num_groups=12, p_assign=1.0)
        latent = draw_latent(cfg, rng)
        g = draw_groups(latent, cfg, rng)
        np.testing.assert_array_equal(g // 3, latent)

    def test_covariance(self):
        sigma = ar_covariance(10)
        assert sigma[0, 0] == 1.0
        assert sigma[0, 2] == 0.25
        np.testing.assert_array_equal(sigma, sigma.T)
        assert np.all(np.linalg.eigvalsh(sigma) > 0)

    @pytest.mark.parametrize("shared", [False, True])
    def test_latent_means_support(self, rng, shared):
        params = draw_params(SimConfig(num_latent=5, num_groups=10, shared_support=shared), rng)
        for row in params.mu:
            assert np.count_nonzero(row) == 3
            assert set(np.unique(row[row != 0])) <= {-1.0, 1.0}
        if shared:
            supports = {tuple(np.flatnonzero(row)) for row in params.mu}
            assert len(supports) == 1

    @pytest.mark.parametrize("setup", ["global_linear", "latent_linear", "latent_piecewise"])
    def test_unit_slopes(self, rng, setup):
        params = draw_params(SimConfig(setup=setup, num_latent=3, num_groups=6), rng)
        for name in ("beta", "beta_l", "beta_plus", "beta_minus"):
            value = getattr(params, name)
            if value is not None:
                np.testing.assert_allclose(np.linalg.norm(np.atleast_2d(value), axis=1), 1.0, atol=1e-12)

    def test_covariate_moments(self, rng):
        cfg = SimConfig(n=100_000, num_latent=1, num_groups=4)
        params = draw_params(cfg, rng)
        x = draw_covariates(np.zeros(cfg.n, dtype=int), params, rng)
        se = np.sqrt(np.diag(params.sigma) / cfg.n)
        assert np.all(np.abs(x.mean(axis=0) - params.mu[0]) <= 4 * se)
        assert np.max(np.abs(np.cov(x, rowvar=False) - params.sigma)) <= 0.03


class TestOutcome:
    def test_intercept_only(self, rng):
        p = 4
        params = SimParams(
            mu=np.zeros((2, p)), sigma=np.eye(p), alpha=np.array([1.5, -2.0]), beta=np.zeros(p)
        )
        latent = np.array([0, 1, 1, 0])
        y = gen_outcome("global_linear", rng.normal(size=(4, p)), latent, params, rng, noise_scale=0.0)
        np.testing.assert_array_equal(y, [1.5, -2.0, -2.0, 1.5])

    def test_global_linear_residuals(self, rng):
        cfg = SimConfig(n=100_000, setup="global_linear", num_latent=2, num_groups=4)
        params = draw_params(cfg, rng)
        latent = draw_latent(cfg, rng)
        x = draw_covariates(latent, params, rng)
        y = gen_outcome(cfg.setup, x, latent, params, rng)
        resid = y - params.alpha[latent] - x @ params.beta
        assert abs(resid.mean()) <= 4 / np.sqrt(cfg.n)
        assert abs(resid.var() - 1.0) <= 4 * np.sqrt(2.0 / cfg.n)

    def test_piecewise_uses_upper_slope_above_median(self, rng):
        params = SimParams(
            mu=np.zeros((1, 1)),
            sigma=np.eye(1),
            alpha=np.zeros(1),
            beta_plus=np.array([[2.0]]),
            beta_minus=np.array([[-3.0]]),
            medians=np.array([0.0]),
        )
        x = np.array([[0.5], [1.0], [4.0]])
        y = gen_outcome("latent_piecewise", x, np.zeros(3, dtype=int), params, rng, noise_scale=0.0)
        np.testing.assert_array_equal(y, 2.0 * x[:, 0])

    def test_unknown_setup(self, rng):
        params = SimParams(mu=np.zeros((1, 3)), sigma=np.eye(3), alpha=np.zeros(1))
        with pytest.raises(ConfigurationError):
            gen_outcome("cubic", np.zeros((2, 3)), np.zeros(2, dtype=int), params, rng)


class TestSimulate:
    def test_shapes_and_occupancy(self):
        out = simulate(SimConfig(n=2000, num_latent=2, num_groups=20, p=10, seed=4))
        d = out.dataset
        assert (d.n, d.p, d.M) == (2000, 10, 20)
        assert d.present.all()
        assert d.covariate_names == tuple(f"x{j}" for j in range(1, 11))
        assert out.latent.min() >= 0 and out.latent.max() <= 1

    def test_same_seed_is_bit_identical(self):
        cfg = SimConfig(n=300, setup="latent_piecewise", seed=9)
        a, b = simulate(cfg), simulate(cfg)
        np.testing.assert_array_equal(a.dataset.x, b.dataset.x)
        np.testing.assert_array_equal(a.dataset.g, b.dataset.g)
        np.testing.assert_array_equal(a.dataset.y, b.dataset.y)
        np.testing.assert_array_equal(a.latent, b.latent)

    def test_next_seed_differs(self):
        a = simulate(SimConfig(n=300, seed=9))
        b = simulate(SimConfig(n=300, seed=10))
        assert not np.array_equal(a.dataset.y, b.dataset.y)

    def test_groups_ignore_covariate_stream(self):
        cfg = SimConfig(n=500, seed=2)
        streams = substreams(cfg.seed)
        perturbed = substreams(cfg.seed)
        perturbed["covariates"] = np.random.default_rng(12345)
        a, b = compose(cfg, streams), compose(cfg, perturbed)
        np.testing.assert_array_equal(a.dataset.g, b.dataset.g)
        np.testing.assert_array_equal(a.latent, b.latent)
        assert not np.array_equal(a.dataset.x, b.dataset.x)

    def test_assignment_rate(self):
        cfg = SimConfig(n=20_000, num_latent=4, num_groups=20, p_assign=0.8, seed=1)
        out = simulate(cfg)
        inside = np.mean(out.dataset.g // 5 == out.latent)
        assert abs(inside - 0.8) <= 4 * np.sqrt(0.8 * 0.2 / cfg.n)

    def test_regenerates_empty_categories(self, monkeypatch, caplog):
        real_compose = dgp_sim.compose
        calls = []

        def drop_first_category_once(cfg, streams):
            out = real_compose(cfg, streams)
            calls.append(cfg.seed)
            if len(calls) == 1:
                keep = np.flatnonzero(out.dataset.g != 0)
                return replace(out, dataset=split_rows(out.dataset, keep))
            return out

        monkeypatch.setattr(dgp_sim, "compose", drop_first_category_once)
        with caplog.at_level("WARNING"):
            out = simulate(SimConfig(n=2000, seed=0))
        assert out.dataset.present.all()
        assert out.regenerations == 1
        assert "regenerating" in caplog.text

    def test_write_params(self, tmp_path):
        out = simulate(SimConfig(n=200, setup="latent_piecewise", seed=3))
        path = tmp_path / "params.json"
        write_params(out.params, path)
        payload = json.loads(path.read_text())
        assert set(payload) == {"mu", "sigma", "alpha", "beta_plus", "beta_minus", "medians"}
        np.testing.assert_allclose(payload["medians"], np.median(out.dataset.x, axis=0))
