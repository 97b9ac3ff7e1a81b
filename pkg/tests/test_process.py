import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from nosmodel.domain import LatentGrid
from nosmodel.process import (
    PROCESS_MODELS,
    ProcessParams,
    RandomWalk2,
    get_process_model,
    process_log_prior,
    register_process_model,
)


def _params(n_pop, level=0.0, lam=1.0, scale=1.0):
    return ProcessParams(np.full(n_pop, level), np.full(n_pop, lam), scale)


def _second_difference_part(eta, params):
    """Log prior minus every term except the second differences."""
    eta = np.asarray(eta, dtype=float)
    total = process_log_prior(eta, params)
    rest = np.sum(stats.norm.logpdf(eta[:, 0], params.level, 10.0))
    if eta.shape[1] >= 2:
        rest += np.sum(stats.norm.logpdf(eta[:, 1] - eta[:, 0], 0.0, 10.0))
    rest += np.sum(stats.halfnorm.logpdf(params.smoothing_sd, scale=params.smoothing_sd_scale))
    rest += stats.halfnorm.logpdf(params.smoothing_sd_scale, scale=1.0)
    return total - rest


class TestProcessLogPrior:
    def test_three_year_example(self):
        part = _second_difference_part([[0.0, 1.0, 2.5]], _params(1))
        assert part == pytest.approx(-1.043939, abs=5e-7)

    def test_linear_eta_at_mode(self):
        eta = np.array([[0.1 * t - 1.0 for t in range(8)], [0.3 - 0.05 * t for t in range(8)]])
        part = _second_difference_part(eta, _params(2, lam=0.2))
        assert part == pytest.approx(6 * 2 * stats.norm.logpdf(0.0, 0.0, 0.2), rel=1e-12)

    def test_shrinking_lambda_diverges(self):
        eta = np.array([[0.0, 1.0, 2.5, 3.0]])
        values = [process_log_prior(eta, _params(1, lam=lam)) for lam in (1e-1, 1e-2, 1e-3, 1e-4)]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[-1] < -1e6

    def test_against_scipy(self):
        rng = np.random.default_rng(4)
        eta = rng.normal(size=(3, 6))
        p = ProcessParams(rng.normal(size=3), rng.uniform(0.1, 1, size=3), 0.7)
        expected = 0.0
        for c in range(3):
            e = eta[c]
            expected += stats.norm.logpdf(e[0], p.level[c], 10.0)
            expected += stats.norm.logpdf(e[1] - e[0], 0.0, 10.0)
            expected += np.sum(stats.norm.logpdf(np.diff(e, 2), 0.0, p.smoothing_sd[c]))
            expected += stats.halfnorm.logpdf(p.smoothing_sd[c], scale=0.7)
        expected += stats.halfnorm.logpdf(0.7)
        assert process_log_prior(eta, p) == pytest.approx(expected, rel=1e-12)

    def test_accepts_latent_grid(self):
        eta = np.array([[0.0, 0.5, 0.7]])
        grid = LatentGrid(["A"], [2000, 2001, 2002], eta)
        assert process_log_prior(grid, _params(1)) == process_log_prior(eta, _params(1))

    @pytest.mark.parametrize("n_year", [1, 2])
    def test_short_grids(self, n_year):
        eta = np.zeros((2, n_year))
        assert math.isfinite(process_log_prior(eta, _params(2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            process_log_prior(np.zeros((2, 4)), _params(3))

    def test_positive_sds_required(self):
        with pytest.raises(ValueError):
            ProcessParams([0.0], [0.0], 1.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (3, 5), elements=st.floats(-3, 3)), st.integers(0, 2), st.floats(-5, 5))
    def test_translation_only_moves_level_term(self, eta, c, delta):
        p = _params(3, level=0.2, lam=0.4, scale=0.5)
        shifted = eta.copy()
        shifted[c] += delta
        model = RandomWalk2()
        _, g0, gl0, glam0, gs0 = model.log_prior_and_grad(eta, p)
        _, g1, gl1, glam1, gs1 = model.log_prior_and_grad(shifted, p)
        diff = process_log_prior(shifted, p) - process_log_prior(eta, p)
        level_term = stats.norm.logpdf(shifted[c, 0], 0.2, 10) - stats.norm.logpdf(eta[c, 0], 0.2, 10)
        assert diff == pytest.approx(level_term, abs=1e-9)
        np.testing.assert_allclose(glam1, glam0, atol=1e-9)
        assert gs1 == pytest.approx(gs0, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, (4, 6), elements=st.floats(-3, 3)))
    def test_additive_across_populations(self, eta):
        p = ProcessParams(np.linspace(-1, 1, 4), np.linspace(0.1, 0.4, 4), 0.5)
        total = process_log_prior(eta, p)
        hyper = stats.halfnorm.logpdf(0.5)
        parts = sum(
            process_log_prior(eta[c:c + 1], ProcessParams(p.level[c:c + 1], p.smoothing_sd[c:c + 1], 0.5)) - hyper
            for c in range(4)
        )
        assert total == pytest.approx(parts + hyper, rel=1e-10, abs=1e-9)


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        eta = rng.normal(size=(2, 5))
        level = rng.normal(size=2)
        lam = rng.uniform(0.2, 1.0, size=2)
        scale = 0.6
        model = RandomWalk2()
        _, d_eta, d_level, d_lam, d_scale = model.log_prior_and_grad(eta, ProcessParams(level, lam, scale))

        def f(x):
            e = x[:10].reshape(2, 5)
            return model.log_prior(e, ProcessParams(x[10:12], x[12:14], x[14]))

        x = np.concatenate([eta.ravel(), level, lam, [scale]])
        h = 1e-6
        fd = np.array([(f(x + h * np.eye(15)[i]) - f(x - h * np.eye(15)[i])) / (2 * h) for i in range(15)])
        analytic = np.concatenate([d_eta.ravel(), d_level, d_lam, [d_scale]])
        np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-7)


class TestRegistry:
    def test_default(self):
        assert isinstance(get_process_model(), RandomWalk2)

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_process_model("logistic")

    def test_register(self):
        @register_process_model
        class Flat(RandomWalk2):
            name = "flat_test"

            def log_prior_and_grad(self, eta, params):
                eta = np.asarray(eta, dtype=float)
                n = eta.shape[0]
                return 0.0, np.zeros_like(eta), np.zeros(n), np.zeros(n), 0.0

        try:
            assert process_log_prior(np.ones((1, 3)), _params(1), model="flat_test") == 0.0
        finally:
            PROCESS_MODELS.pop("flat_test")
