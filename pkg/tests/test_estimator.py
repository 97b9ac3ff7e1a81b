import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone

from nosmodel import NOSEstimator, OutlierClassifier
from nosmodel.datamodel import horseshoe_scale
from nosmodel.sim import SimDesign, simulate_dataset

FAST = {"chains": 2, "warmup": 150, "draws": 100}


@pytest.fixture(scope="module")
def data():
    return simulate_dataset(SimDesign(n_populations=3, n_years=8, seed=2)).observations


@pytest.fixture(scope="module")
def fitted(data):
    return NOSEstimator(seed=1, **FAST).fit(data)


class TestNOSEstimator:
    def test_params_round_trip(self):
        est = NOSEstimator(tau_scale=0.1, chains=3)
        assert clone(est).get_params() == est.get_params()
        est.set_params(seed=9)
        assert est.seed == 9

    def test_single_chain_refused(self, data):
        with pytest.raises(ValueError, match="chains"):
            NOSEstimator(chains=1).fit(data)

    def test_fit_attributes(self, fitted, data):
        assert fitted.draws_.n_chains == 2
        assert fitted.draws_.n_draws == 100
        assert len(fitted.possibly_outlying_) == len(data)
        # the internal classifier ran: DHS is the reference everywhere
        src = fitted.observations_["source_type"].to_numpy()
        assert fitted.possibly_outlying_[src != "DHS"].all()

    def test_summary_tables(self, fitted):
        s = fitted.summary(names=["tau", "rho_pma"])
        assert list(s["parameter"]) == ["tau", "rho_pma"]
        ind = fitted.indicator_summary()
        assert len(ind) == 3 * 8
        assert (ind["phi_q5"] <= ind["phi_median"]).all()
        assert (ind["phi_median"] <= ind["phi_q95"]).all()

    def test_predict(self, fitted, data):
        pred = fitted.predict(data)
        assert pred.shape == (len(data),)
        assert np.all((pred > 0) & (pred < 1))
        with pytest.raises(ValueError):
            fitted.predict(pd.DataFrame({"population": ["P01"], "year": [1950]}))

    def test_observation_summary(self, fitted, data):
        table = fitted.observation_summary()
        assert len(table) == len(data)
        st = fitted.structure_
        assert np.all(table["total_error_sd_median"] >= np.sqrt(st.s2) - 1e-15)

    def test_error_sd_draws_match_formula(self, fitted):
        sd = fitted.error_sd_draws()
        draws, st = fitted.draws_, fitted.structure_
        k = 17
        i = int(np.flatnonzero(st.outlier >= 0)[0])
        oid = int(st.ids[i])
        src = ("MICS", "PMA", "National", "Other")[st.source[i]]
        expected = st.s2[i] + draws.flat(f"source_scale[{src}]")[k] ** 2
        if st.in_char[i]:
            expected += draws.flat("char_scale")[k] ** 2
        expected += horseshoe_scale(draws.flat("tau")[k], draws.flat("slab")[k], draws.flat(f"local_scale[{oid}]")[k]) ** 2
        assert sd[k, i] == pytest.approx(np.sqrt(expected), rel=1e-12)

    def test_supplied_flags_used(self, data):
        flagged = OutlierClassifier().fit_transform(data)
        flagged["possibly_outlying"] = False
        est = NOSEstimator(**FAST)
        _, flags, model = est.build_model(flagged)
        assert not flags.any()
        assert model.layout["local_scale"].stop == model.layout["local_scale"].start

    def test_outlier_term_off(self, data):
        _, flags, model = NOSEstimator(outlier_term=False).build_model(data)
        assert not flags.any()
        assert len(model.structure.outlier_ids) == 0

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            NOSEstimator().summary()

    def test_deterministic(self, data, fitted):
        again = NOSEstimator(seed=1, **FAST).fit(data)
        np.testing.assert_array_equal(again.draws_.values, fitted.draws_.values)
