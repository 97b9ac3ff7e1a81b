import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from nosmodel.datamodel import DataModelParams, build_covariance, build_error_structure, data_log_density
from nosmodel.domain import check_observations, inv_logit, logit
from nosmodel.sim import (
    Injection,
    SimDesign,
    dense_normal_logpdf,
    finite_difference_gradient,
    simulate_dataset,
)

ZERO_SCALES = {"MICS": 0.0, "PMA": 0.0, "National": 0.0, "Other": 0.0}


def _errors(sim):
    """Logit-scale total errors of the simulated observations."""
    df = sim.observations
    years = sim.truth.years
    pops = {p: i for i, p in enumerate(sim.truth.populations)}
    truth = sim.truth.eta[df["population"].map(pops).to_numpy(), df["year"].to_numpy() - years[0]]
    return logit(df["value"].to_numpy()) - truth


class TestSimulateDataset:
    def test_noiseless(self):
        design = SimDesign(n_populations=3, n_years=6, source_scale=ZERO_SCALES, char_scale=0.0, tau=0.0,
                           sampling_variance_scale=0.0, seed=4)
        sim = simulate_dataset(design)
        df = sim.observations
        pops = {p: i for i, p in enumerate(sim.truth.populations)}
        expected = inv_logit(sim.truth.eta[df["population"].map(pops), df["year"] - design.start_year])
        np.testing.assert_array_equal(df["value"].to_numpy(), expected)
        assert (df["se_proportion"] == 0).all()

    def test_pma_correlation(self):
        design = SimDesign(n_populations=10_000, n_years=2, obs_per_source={"PMA": 2}, rho_pma=0.999,
                           outlier_sources=(), sampling_variance_scale=1e-8, seed=1)
        err = _errors(simulate_dataset(design)).reshape(-1, 2)
        assert np.corrcoef(err[:, 0], err[:, 1])[0, 1] > 0.99

    def test_pma_correlation_with_gaps(self):
        eta = np.zeros((20_000, 4))
        design = SimDesign(n_populations=20_000, n_years=4, obs_per_source={"PMA": 3}, rho_pma=0.8,
                           outlier_sources=(), sampling_variance_scale=1e-8, eta=eta, seed=6)
        sim = simulate_dataset(design)
        df = sim.observations
        gappy = df.groupby("population")["year"].transform(lambda y: tuple(y) == (2000, 2001, 2003))
        err = _errors(sim)[gappy.to_numpy()].reshape(-1, 3)
        corr = np.corrcoef(err.T)
        # about 5000 series; Monte Carlo sd of a correlation near 0.6 is ~0.01
        assert corr[0, 1] == pytest.approx(0.8, abs=0.03)
        assert corr[1, 2] == pytest.approx(0.8**2, abs=0.03)
        assert corr[0, 2] == pytest.approx(0.8**3, abs=0.03)

    def test_mics_variance_additivity(self):
        design = SimDesign(n_populations=10_000, n_years=10, obs_per_source={"MICS": 10}, outlier_sources=(),
                           seed=2)
        sim = simulate_dataset(design)
        df = check_observations(sim.observations)
        standardized = _errors(sim) / np.sqrt(df["s2"].to_numpy() + 0.19**2)
        assert len(standardized) == 100_000
        assert np.var(standardized) == pytest.approx(1.0, rel=0.02)

    def test_reproducible(self):
        a = simulate_dataset(SimDesign(seed=5))
        b = simulate_dataset(SimDesign(seed=5))
        pd.testing.assert_frame_equal(a.observations, b.observations)
        np.testing.assert_array_equal(a.truth.eta, b.truth.eta)

    def test_schema_valid(self):
        sim = simulate_dataset(SimDesign(n_populations=4, char_fraction=0.3, seed=0))
        df = check_observations(sim.observations)
        assert len(df) == 4 * (3 + 2 + 4 + 2)
        assert set(df["source_type"]) == {"DHS", "MICS", "PMA", "National"}
        assert df.loc[df["source_type"] == "PMA", "pma_series_id"].notna().all()

    def test_local_scales_for_outlier_sources(self):
        sim = simulate_dataset(SimDesign(seed=1))
        df = sim.observations
        expected = set(df.loc[df["source_type"] != "DHS", "id"])
        assert set(sim.params.local_scale) == expected

    def test_injection_shift(self):
        base = SimDesign(n_populations=2, n_years=8, seed=3)
        shifted = SimDesign(**{**base.to_dict(), "injections": [Injection(1, 2004, "National", 1.0)]})
        a, b = simulate_dataset(base), simulate_dataset(shifted)
        assert len(b.injected_ids) == 1
        row = b.observations.set_index("id").loc[b.injected_ids[0]]
        assert row["population"] == "P02" and row["year"] == 2004 and row["source_type"] == "National"
        # identical random stream when the injected observation already existed
        if len(a.observations) == len(b.observations):
            before = a.observations.set_index("id").loc[b.injected_ids[0], "value"]
            assert logit(row["value"]) - logit(before) == pytest.approx(1.0, abs=1e-9)

    def test_injection_creates_observation(self):
        design = SimDesign(n_populations=1, n_years=5, obs_per_source={"DHS": 5},
                           injections=[{"population": 0, "year": 2002, "source": "National", "shift": 0.5}])
        sim = simulate_dataset(design)
        assert (sim.observations["source_type"] == "National").sum() == 1

    def test_explicit_eta(self):
        eta = np.linspace(-1, 1, 10).reshape(2, 5)
        sim = simulate_dataset(SimDesign(n_populations=2, n_years=5, eta=eta, obs_per_source={"DHS": 2}))
        np.testing.assert_array_equal(sim.truth.eta, eta)

    @pytest.mark.parametrize(
        "kw",
        [
            {"n_populations": 0},
            {"obs_per_source": {"DHS": 20}},
            {"obs_per_source": {"Census": 1}},
            {"rho_pma": 1.0},
            {"injections": [{"population": 0, "year": 2000, "source": "DHS", "shift": float("inf")}]},
            {"injections": [{"population": 7, "year": 2000, "source": "DHS", "shift": 1.0}]},
            {"eta": np.zeros((2, 2))},
        ],
    )
    def test_invalid_design(self, kw):
        with pytest.raises(ValueError):
            SimDesign(**kw)


class TestDenseNormalLogpdf:
    def test_one_dimensional(self):
        assert dense_normal_logpdf([0.3], [0.3], [[1.0]]) == pytest.approx(-0.918939, abs=5e-7)

    def test_independence(self):
        z, m = np.array([0.2, -1.0]), np.array([0.0, 0.5])
        expected = stats.norm.logpdf(0.2, 0, 1) + stats.norm.logpdf(-1.0, 0.5, 1)
        assert dense_normal_logpdf(z, m, np.eye(2)) == pytest.approx(expected, rel=1e-13)

    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 5))
        cov = a @ a.T + 0.5 * np.eye(5)
        z, m = rng.normal(size=5), rng.normal(size=5)
        assert dense_normal_logpdf(z, m, cov) == pytest.approx(stats.multivariate_normal(m, cov).logpdf(z), rel=1e-12)

    def test_block_pairing(self, make_frame):
        rows = [{"population": "A", "year": 2000 + k, "value": 0.2 + 0.05 * k, "source_type": "PMA"} for k in range(5)]
        df = check_observations(make_frame(rows))
        structure = build_error_structure(df)
        params = DataModelParams({"PMA": 0.1}, 0.1, 0.04, 1.0, {}, 0.7)
        eta = np.full((1, 5), -1.0)
        dense = dense_normal_logpdf(structure.z, np.full(5, -1.0), build_covariance(structure.blocks[0], structure, params))
        assert data_log_density(None, eta, structure, params) == pytest.approx(dense, rel=1e-10)

    def test_not_positive_definite(self):
        with pytest.raises(np.linalg.LinAlgError):
            dense_normal_logpdf([0, 0], [0, 0], [[1.0, 2.0], [2.0, 1.0]])


class TestFiniteDifferenceGradient:
    def test_quadratic(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 4))
        h = a @ a.T
        b = rng.normal(size=4)
        f = lambda x: 0.5 * x @ h @ x + b @ x  # noqa: E731
        x = rng.normal(size=4)
        np.testing.assert_allclose(finite_difference_gradient(f, x, 1e-4), h @ x + b, atol=1e-8)

    def test_constant(self):
        np.testing.assert_array_equal(finite_difference_gradient(lambda x: 3.0, np.ones(3)), 0.0)

    def test_sine(self):
        g = finite_difference_gradient(lambda x: math.sin(x[0]), np.array([0.4]), 1e-5)
        assert g[0] == pytest.approx(math.cos(0.4), abs=1e-9)
