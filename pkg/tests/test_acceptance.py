"""Acceptance suite: one PASS/FAIL line per criterion.

The recovery study (criteria 4 and 6) takes about 90 minutes on one core
the first time; its results are cached by ``tests/recovery.py``.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

import recovery
from conftest import obs_frame
from nosmodel import NOSEstimator, OutlierClassifier
from nosmodel.checks import check_gradient, check_horseshoe_limits, check_likelihood_oracle
from nosmodel.cli import cmd_fit, cmd_preprocess, cmd_simulate
from nosmodel.config import RunConfig
from nosmodel.datamodel import predictive_error_samples
from nosmodel.domain import check_observations, delta_logit_variance, logit
from nosmodel.io import read_csv
from nosmodel.preprocess import classify_possible_outliers, flag_trend_outliers
from nosmodel.sim import Injection, SimDesign, simulate_dataset


@pytest.fixture
def report(capsys):
    def emit(number, name, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] {number} {name}: {detail}")
        return passed

    return emit


@pytest.fixture(scope="module")
def study():
    return recovery.run_study(verbose=True)


class TestOracles:
    def test_1_likelihood_oracle(self, report):
        start = time.perf_counter()
        result = check_likelihood_oracle(200, tolerance=1e-10)
        seconds = time.perf_counter() - start
        ok = result.passed and seconds < 5.0
        assert report(1, "likelihood oracle", ok,
                      f"max rel error {result.max_error:.2e} (<= 1e-10), {seconds:.2f}s (< 5s)")

    def test_2_gradient(self, report):
        start = time.perf_counter()
        result = check_gradient(20, rtol=1e-5, atol=1e-7)
        seconds = time.perf_counter() - start
        ok = result.passed and seconds < 30.0
        assert report(2, "gradient", ok, f"{result.detail}; max error {result.max_error:.2e}, {seconds:.2f}s (< 30s)")

    def test_3_horseshoe_limits(self, report):
        results = check_horseshoe_limits()
        ok = all(r.passed for r in results)
        detail = "; ".join(f"{r.name} {r.max_error:.1e} (tol {r.tolerance:.0e})" for r in results)
        assert report(3, "horseshoe limits", ok, detail)


class TestRecovery:
    def test_4_parameter_recovery(self, study, report):
        lines, ok = [], True
        for name in recovery.RECOVERED:
            truth = recovery.TRUTH[name]
            p = [res["parameters"][name] for res in study]
            covered = sum(r["q2_5"] <= truth <= r["q97_5"] for r in p)
            rhat = max(r["rhat"] for r in p)
            ess = min(r["ess_bulk"] for r in p)
            ok &= covered >= 17 and rhat <= 1.05 and ess >= 100
            lines.append(f"{name} covered {covered}/{len(p)}, max R-hat {rhat:.3f}, min ESS {ess:.0f}")
        slowest = max(res["seconds"] for res in study)
        ok &= slowest <= 600
        lines.append(f"slowest fit {slowest:.0f}s")
        assert report(4, "parameter recovery", ok, "; ".join(lines))

    def test_6_predictive_tail(self, study, report):
        cached = study[0]["draws"]
        draws = SimpleNamespace(flat=lambda name: np.asarray(cached[name]))
        outlier = predictive_error_samples(draws, "outlier", 100_000, seed=1)
        national = predictive_error_samples(draws, "National", 100_000, seed=2)
        p_out = float(np.mean(np.abs(outlier) > 0.5))
        p_nat = float(np.mean(np.abs(national) > 0.5))
        assert report(6, "predictive tail", p_out > p_nat, f"P(|E|>0.5) outlier {p_out:.5f} vs National {p_nat:.5f}")


def _eta_median(est, population, year):
    return float(np.median(est.draws_.flat(f"eta[{population},{year}]")))


class TestOutlierRobustness:
    SAMPLER = {"chains": 4, "warmup": 500, "draws": 500, "seed": 3}

    @pytest.fixture(scope="class")
    @classmethod
    def fits(cls):
        base = SimDesign(n_populations=6, n_years=15, tau=0.0, seed=21)
        clean = simulate_dataset(base).observations
        # a National observation in the middle of the first population's series
        nat = clean[(clean["population"] == "P01") & (clean["source_type"] == "National")]
        target = nat.iloc[(nat["year"] - 2007).abs().argsort().iloc[0]]
        injected_design = SimDesign(**{**base.to_dict(), "injections": [
            Injection(0, int(target["year"]), "National", 1.0)]})
        injected = simulate_dataset(injected_design)
        obs_id = injected.injected_ids[0]
        assert obs_id == target["id"]

        def flagged(frame):
            out = OutlierClassifier().fit_transform(frame)
            out.loc[out["id"] == obs_id, "possibly_outlying"] = True
            return out

        fits = {}
        for outlier_term in (True, False):
            for label, frame in (("clean", clean), ("injected", injected.observations)):
                est = NOSEstimator(outlier_term=outlier_term, **cls.SAMPLER).fit(flagged(frame))
                fits[outlier_term, label] = est
        return SimpleNamespace(fits=fits, obs_id=int(obs_id), population="P01", year=int(target["year"]),
                               shift=logit(injected.observations.set_index("id").loc[obs_id, "value"])
                               - logit(target["value"]))

    def test_5_outlier_robustness(self, fits, report):
        assert fits.shift == pytest.approx(1.0, abs=1e-9)
        move = {
            term: abs(_eta_median(fits.fits[term, "injected"], fits.population, fits.year)
                      - _eta_median(fits.fits[term, "clean"], fits.population, fits.year))
            for term in (True, False)
        }
        est = fits.fits[True, "injected"]
        gamma = {int(c[len("local_scale["):-1]): float(np.median(est.draws_.flat(c)))
                 for c in est.draws_.columns if c.startswith("local_scale[")}
        mine = gamma.pop(fits.obs_id)
        q90 = float(np.quantile(list(gamma.values()), 0.9))
        a = move[True] < 0.35 * fits.shift
        b = move[False] > move[True]
        c = mine > q90
        assert report(5, "outlier robustness", a and b and c,
                      f"(a) eta moved {move[True]:.3f} < 0.35 [{a}]; (b) without outlier term {move[False]:.3f} "
                      f"> {move[True]:.3f} [{b}]; (c) gamma median {mine:.2f} > 90th pct {q90:.2f} of "
                      f"{len(gamma)} others [{c}]")


def _rows(population, source, years, values=None):
    values = [0.3] * len(years) if values is None else values
    return [{"population": population, "year": y, "value": v, "source_type": source} for y, v in zip(years, values)]


class TestPreprocessingRules:
    @staticmethod
    def _fixture():
        rows = _rows("dhs", "DHS", [1985, 1995, 2005]) + _rows("dhs", "National", [2000, 2001, 2002])
        rows += _rows("majority", "National", [1995, 2000, 2005]) + _rows("majority", "Other", [1980, 1982, 1984, 2003])
        rows += _rows("absent", "MICS", [2000, 2004]) + _rows("absent", "PMA", [2001, 2002])
        # twenty reference observations scattered around a flat level give distinct residuals
        years = list(range(1991, 2011))
        rows += _rows("trend", "DHS", years, list(0.3 + 0.004 * np.arange(1, 21) * (-1) ** np.arange(20)))
        return obs_frame(rows)

    def test_7_preprocessing(self, report, tmp_path):
        raw = self._fixture()
        df = check_observations(raw)
        result = classify_possible_outliers(df)
        refs = result.reference_source
        flags = result.table.set_index("id")["possibly_outlying"]
        pop, src, year = df["population"], df["source_type"], df["year"]
        checks = {
            "DHS preference": refs["dhs"] == "DHS",
            "post-1990 majority": refs["majority"] == "National",
            "absent reference": refs["absent"] is None and flags[df.loc[pop == "absent", "id"]].all(),
            "pre-1990 DHS flagged": bool(flags[df.loc[(pop == "dhs") & (year == 1985), "id"]].iloc[0])
            and not flags[df.loc[(pop == "dhs") & (year > 1990) & (src == "DHS"), "id"]].any(),
            "two of twenty": int(flag_trend_outliers(np.arange(1.0, 21.0)).sum()) == 2
            and int(flags[df.loc[pop == "trend", "id"]].sum()) == 2,
        }
        target = int(df.loc[pop == "absent", "id"].iloc[0])
        overridden = classify_possible_outliers(df, overrides=(target,)).table.set_index("id")
        checks["override"] = not overridden.loc[target, "possibly_outlying"] and overridden.loc[target, "trigger"] == "override"

        # byte reproducibility through the command
        data = tmp_path / "obs.csv"
        raw.to_csv(data, index=False)
        for d in ("a", "b"):
            cmd_preprocess(RunConfig().with_overrides(paths={"data": str(data), "output": str(tmp_path / d)}))
        checks["byte-reproducible"] = all(
            (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
            for n in ("classification.csv", "reference_sources.log")
        )
        failed = [k for k, v in checks.items() if not v]
        assert report(7, "preprocessing rules", not failed,
                      f"{len(checks) - len(failed)}/{len(checks)} rules hold" + (f"; failed {failed}" if failed else ""))


class TestDeltaMethod:
    def test_8_delta_method(self, report):
        rng = np.random.default_rng(8)
        errors = {}
        for p in (0.2, 0.4, 0.5):
            draws = p + 0.02 * rng.standard_normal(1_000_000)
            mc = float(np.var(np.log(draws / (1 - draws))))
            errors[p] = abs(delta_logit_variance(p, 0.02**2) - mc) / mc
        ok = all(e < 0.05 for e in errors.values())
        assert report(8, "delta method", ok, ", ".join(f"p={p}: {e:.2%}" for p, e in errors.items()) + " (< 5%)")


class TestEndToEnd:
    def test_9_determinism(self, report, tmp_path):
        design = SimDesign(n_populations=3, n_years=8, seed=9)
        files = ("summary.csv", "indicator_summary.csv", "diagnostics.csv", "observations.csv")
        outputs = []
        for run in ("a", "b"):
            root = tmp_path / run
            cmd_simulate(design, root / "sim")
            config = RunConfig.from_dict(yaml.safe_load(
                "sampler: {seed: 5}\n"
            )).with_overrides(paths={"data": str(root / "sim" / "data_001.csv"), "output": str(root / "pre")})
            cmd_preprocess(config)
            config = config.with_overrides(paths={"classification": str(root / "pre" / "classification.csv"),
                                                  "output": str(root / "fit")})
            code = cmd_fit(config)
            outputs.append((code, [(root / "fit" / f).read_bytes() for f in files]))
        same = outputs[0][1] == outputs[1][1]
        rows = len(read_csv(tmp_path / "a" / "fit" / "indicator_summary.csv")[0])
        assert report(9, "end-to-end determinism", same,
                      f"{len(files)} summary files identical: {same}; exit codes {outputs[0][0]}, {outputs[1][0]}; "
                      f"{rows} population-years")
