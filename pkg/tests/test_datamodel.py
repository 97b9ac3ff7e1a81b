import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nosmodel.checks import random_instance
from nosmodel.datamodel import (
    SOURCE_ERROR_TYPES,
    DataModelParams,
    build_covariance,
    build_error_structure,
    data_log_density,
    datamodel_log_prior,
    horseshoe_scale,
    predictive_error_samples,
    total_error_sd,
    total_error_variance,
)
from nosmodel.domain import check_observations
from nosmodel.inference.draws import PosteriorDraws
from nosmodel.sim import dense_data_log_density


def _params(**kw):
    base = dict(source_scale={"MICS": 0.19, "PMA": 0.1, "National": 0.015, "Other": 0.1},
                char_scale=0.1, tau=0.04, slab=1.0, local_scale={}, rho_pma=0.8)
    base.update(kw)
    return DataModelParams(**base)


def _structure(make_frame, rows, flags=None):
    df = check_observations(make_frame(rows))
    return build_error_structure(df, flags)


def _draws(**columns):
    names = list(columns)
    values = np.stack([np.asarray(columns[n], dtype=float) for n in names], axis=-1)[None]
    return PosteriorDraws(names, values, np.zeros(values.shape[:2]))


class TestHorseshoeScale:
    def test_zero_gamma(self):
        assert horseshoe_scale(0.04, 1.0, 0.0) == 0.0

    def test_wide_limit(self):
        assert horseshoe_scale(0.04, 1.0, 1e9) == pytest.approx(1.0, abs=1e-6)

    def test_direct_formula(self):
        assert horseshoe_scale(0.1, 0.5, 5.0) == pytest.approx(math.sqrt(0.125), abs=5e-7)

    def test_midpoint(self):
        assert horseshoe_scale(0.2, 0.7, 3.5) == pytest.approx(0.7 / math.sqrt(2), rel=1e-12)

    def test_infinite_gamma(self):
        assert horseshoe_scale(0.04, 1.0, np.inf) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(1e-4, 10.0),
        st.floats(1e-3, 10.0),
        st.floats(1e-6, 1e6),
        st.floats(1.0001, 100.0),
    )
    def test_increasing_and_bounded(self, tau, slab, gamma, factor):
        lo = horseshoe_scale(tau, slab, gamma)
        hi = horseshoe_scale(tau, slab, gamma * factor)
        # monotone up to rounding once the scale saturates at the slab
        assert 0.0 < lo <= hi * (1 + 1e-15)
        assert hi <= slab
        # the closed form with sqrt agrees
        u = tau * gamma
        assert lo == pytest.approx(math.sqrt(u * u * slab * slab / (slab * slab + u * u)), rel=1e-12)


class TestTotalErrorSd:
    def test_dhs_sampling_only(self, make_frame):
        # s2 on the logit scale: se 0.025 at p = 0.5 gives s = 0.1
        s = _structure(make_frame, [{"population": "A", "year": 2000, "value": 0.5, "source_type": "DHS",
                                     "se_proportion": 0.025}])
        assert total_error_sd(1, s, _params()) == pytest.approx(0.1, rel=1e-12)

    def test_mics(self, make_frame):
        s = _structure(make_frame, [{"population": "A", "year": 2000, "value": 0.5, "source_type": "MICS",
                                     "se_proportion": 0.025}])
        assert total_error_sd(1, s, _params()) == pytest.approx(math.sqrt(0.0461), abs=5e-6)
        assert total_error_sd(1, s, _params()) == pytest.approx(0.21471, abs=5e-6)

    def test_zero_gamma_inert(self, make_frame):
        rows = [{"population": "A", "year": 2000, "value": 0.4, "source_type": "National"}]
        plain = total_error_sd(1, _structure(make_frame, rows), _params())
        flagged = total_error_sd(1, _structure(make_frame, rows, [True]), _params(local_scale={1: 0.0}))
        assert flagged == plain

    def test_additivity(self, make_frame):
        rows = [{"population": "A", "year": 2000, "value": 0.4, "source_type": "Other", "char_mismatch": True}]
        s = _structure(make_frame, rows, [True])
        p = _params(local_scale={1: 2.0})
        expected = s.s2[0] + 0.1**2 + 0.1**2 + horseshoe_scale(0.04, 1.0, 2.0) ** 2
        assert total_error_sd(1, s, p) ** 2 == pytest.approx(expected, rel=1e-14)
        assert total_error_variance(s, p)[0] == pytest.approx(expected, rel=1e-14)

    def test_missing_gamma(self, make_frame):
        s = _structure(make_frame, [{"population": "A", "year": 2000, "value": 0.4, "source_type": "MICS"}], [True])
        with pytest.raises(KeyError):
            total_error_sd(1, s, _params())


class TestBuildCovariance:
    def _pma(self, make_frame, years, se=0.025):
        rows = [{"population": "A", "year": y, "value": 0.5, "source_type": "PMA", "se_proportion": se}
                for y in years]
        return _structure(make_frame, rows)

    def test_single(self, make_frame):
        s = self._pma(make_frame, [2000])
        p = _params(source_scale={"PMA": 0.0})
        np.testing.assert_allclose(build_covariance(s.blocks[0], s, p), [[0.01]], rtol=1e-12)

    def test_two_years_apart(self, make_frame):
        s = self._pma(make_frame, [2000, 2002])
        p = _params(source_scale={"PMA": 0.0}, rho_pma=0.8)
        cov = build_covariance(s.blocks[0], s, p)
        assert cov[0, 1] == pytest.approx(0.0064, rel=1e-12)
        assert cov[1, 0] == cov[0, 1]

    def test_independence_limit(self, make_frame):
        s = self._pma(make_frame, [2000, 2001, 2002])
        cov = build_covariance(s.blocks[0], s, _params(rho_pma=1e-12))
        off = cov - np.diag(np.diag(cov))
        assert np.diag(cov).max() < 0.1
        assert np.abs(off).max() <= 1e-13

    def test_positive_definite(self, make_frame):
        rng = np.random.default_rng(1)
        for _ in range(50):
            years = np.sort(rng.choice(np.arange(2000, 2015), size=int(rng.integers(2, 8)), replace=False))
            s = self._pma(make_frame, years.tolist())
            cov = build_covariance(s.blocks[0], s, _params(rho_pma=float(rng.uniform(0.01, 0.99))))
            np.testing.assert_array_equal(cov, cov.T)
            assert np.linalg.eigvalsh(cov).min() > 0

    def test_series_are_separate_blocks(self, make_frame):
        rows = [{"population": "A", "year": 2000, "value": 0.5, "source_type": "PMA", "pma_series_id": "x"},
                {"population": "A", "year": 2001, "value": 0.5, "source_type": "PMA", "pma_series_id": "y"},
                {"population": "B", "year": 2000, "value": 0.5, "source_type": "PMA", "pma_series_id": "x"},
                {"population": "A", "year": 2000, "value": 0.5, "source_type": "DHS"}]
        s = _structure(make_frame, rows)
        assert len(s.blocks) == 3
        assert s.independent.tolist() == [3]
        assert (s.prev == -1).all()


class TestDataLogDensity:
    def test_zero_residual_unit_scale(self, make_frame):
        s = _structure(make_frame, [{"population": "A", "year": 2000, "value": 0.5, "source_type": "MICS",
                                     "se_proportion": 0.0}])
        p = _params(source_scale={"MICS": 1.0})
        assert data_log_density(None, np.zeros((1, 1)), s, p) == pytest.approx(-0.918939, abs=5e-7)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            structure, eta, params = random_instance(rng)
            fast = data_log_density(None, eta, structure, params)
            dense = dense_data_log_density(structure, eta, params)
            assert fast == pytest.approx(dense, rel=1e-10)

    def test_doubling_sigma(self, make_frame):
        rows = [{"population": "A", "year": 2000 + k, "value": 0.3, "source_type": src, "se_proportion": 0.0}
                for k, src in enumerate(["MICS", "National", "PMA", "PMA", "Other"])]
        s = _structure(make_frame, rows)
        eta = np.full((1, len(s.years)), s.z[0])
        a = _params(source_scale={"MICS": 0.1, "PMA": 0.2, "National": 0.3, "Other": 0.4}, char_scale=0.0)
        b = _params(source_scale={"MICS": 0.2, "PMA": 0.4, "National": 0.6, "Other": 0.8}, char_scale=0.0)
        diff = data_log_density(None, eta, s, a) - data_log_density(None, eta, s, b)
        assert diff == pytest.approx(5 * math.log(2.0), rel=1e-12)

    def test_rho_outside_support(self, make_frame):
        s = _structure(make_frame, [{"population": "A", "year": 2000, "value": 0.5, "source_type": "DHS"}])
        with pytest.raises(ValueError):
            data_log_density(None, np.zeros((1, 1)), s, _params(rho_pma=1.5))


class TestDatamodelLogPrior:
    def _at_zero(self):
        return _params(source_scale={}, char_scale=0.0, tau=0.0, slab=0.0, rho_pma=0.5)

    def test_modes(self):
        hn = lambda sd: math.log(2 / (sd * math.sqrt(2 * math.pi)))  # noqa: E731
        expected = 4 * hn(0.5) + hn(0.5) + math.log(2 / (math.pi * 0.04)) + hn(1.0)
        assert datamodel_log_prior(self._at_zero()) == pytest.approx(expected, rel=1e-12)

    def test_rho_outside(self):
        assert datamodel_log_prior(_params(rho_pma=1.5)) == -np.inf

    def test_negative_scale(self):
        assert datamodel_log_prior(_params(char_scale=-0.1)) == -np.inf

    def test_one_local_scale(self):
        base = datamodel_log_prior(_params())
        more = datamodel_log_prior(_params(local_scale={7: 1.0}))
        assert more - base == pytest.approx(math.log(1 / math.pi), rel=1e-12)

    def test_rho_flat(self):
        assert datamodel_log_prior(_params(rho_pma=0.1)) == datamodel_log_prior(_params(rho_pma=0.9))


class TestPredictiveErrorSamples:
    def test_national_sd(self):
        draws = _draws(**{"source_scale[National]": np.full(200, 0.015)})
        e = predictive_error_samples(draws, "National", 100_000, seed=1)
        assert e.std() == pytest.approx(0.015, rel=0.02)

    def test_zero_tau(self):
        draws = _draws(tau=np.zeros(50), slab=np.ones(50))
        assert np.all(predictive_error_samples(draws, "outlier", 10_000, seed=2) == 0.0)

    def test_heavy_tail_ordering(self):
        draws = _draws(tau=np.full(10, 0.04), slab=np.ones(10), **{"source_scale[National]": np.full(10, 0.015)})
        out = predictive_error_samples(draws, "outlier", 1_000_000, seed=3)
        nat = predictive_error_samples(draws, "National", 1_000_000, seed=4)
        assert np.mean(np.abs(out) > 0.5) > np.mean(np.abs(nat) > 0.5)

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            predictive_error_samples(_draws(tau=[0.1]), "DHS", 10)

    def test_reproducible(self):
        draws = _draws(**{f"source_scale[{k}]": np.linspace(0.1, 0.2, 20) for k in SOURCE_ERROR_TYPES})
        a = predictive_error_samples(draws, "MICS", 100, seed=5)
        b = predictive_error_samples(draws, "MICS", 100, seed=5)
        np.testing.assert_array_equal(a, b)
