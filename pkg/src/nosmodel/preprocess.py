"""Classification of observations as possibly outlying.

Three steps per population:

1. flag observations with documented quality concerns or matching a rule
   (by default, DHS surveys before 1990);
2. pick a reference source among the remaining observations: DHS if present,
   otherwise National or Other, whichever has more observations from 1990 on;
   everything outside the reference category is possibly outlying;
3. fit a smooth long-term trend through the reference category and flag the
   observations whose absolute residual lies in the top ``top_fraction``.

User overrides that force an observation to be non-outlying are applied last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .domain import check_observations

REFERENCE_CANDIDATES = ("National", "Other")
POST_YEAR = 1990
TREND_VARIANCE_FLOOR = 0.01

# Reasons recorded in the classification table, in precedence order.
TRIGGER_DOCUMENTED = "documented_concern"
TRIGGER_RULE = "rule"
TRIGGER_NO_REFERENCE = "no_reference"
TRIGGER_NOT_REFERENCE = "not_reference_source"
TRIGGER_TREND = "trend_residual"
TRIGGER_OVERRIDE = "override"


@dataclass(frozen=True)
class PreYearRule:
    """Flag observations from ``source`` collected before ``before``."""

    source: str = "DHS"
    before: int = 1990

    def applies(self, df):
        return (df["source_type"] == self.source).to_numpy() & (df["year"].to_numpy() < self.before)


DEFAULT_RULES = (PreYearRule("DHS", 1990),)


@dataclass
class OutlierClassification:
    """Per-observation verdicts and per-population reference sources."""

    table: pd.DataFrame
    reference_source: dict = field(default_factory=dict)

    @property
    def possibly_outlying(self):
        return self.table["possibly_outlying"].to_numpy(dtype=bool)

    def flags_for(self, ids):
        lookup = dict(zip(self.table["id"], self.table["possibly_outlying"]))
        return np.array([bool(lookup[i]) for i in ids], dtype=bool)


@dataclass
class TrendEstimate:
    """Smooth logit-scale curve of one population, evaluated at given years."""

    years: np.ndarray
    values: np.ndarray

    def at(self, years):
        lookup = dict(zip(self.years.tolist(), self.values.tolist()))
        return np.array([lookup[int(y)] for y in np.asarray(years)], dtype=float)


def flag_documented_concerns(df, rules=DEFAULT_RULES):
    """Step 1: documented concerns plus rule-based flags.

    Returns ``(flags, reasons)`` where ``reasons`` names the first trigger.
    """
    documented = df["documented_concern"].to_numpy(dtype=bool)
    by_rule = np.zeros(len(df), dtype=bool)
    for rule in rules:
        by_rule |= rule.applies(df)
    reasons = np.where(documented, TRIGGER_DOCUMENTED, np.where(by_rule, TRIGGER_RULE, ""))
    return documented | by_rule, reasons


def select_reference_source(df, step1_flags) -> Optional[str]:
    """Step 2 for one population: the reference source, or ``None``.

    Ties between National and Other go to National.
    """
    keep = ~np.asarray(step1_flags, dtype=bool)
    src = df["source_type"].to_numpy()[keep]
    if np.any(src == "DHS"):
        return "DHS"
    recent = df["year"].to_numpy()[keep] >= POST_YEAR
    counts = {s: int(np.sum((src == s) & recent)) for s in REFERENCE_CANDIDATES}
    best = max(REFERENCE_CANDIDATES, key=lambda s: counts[s])
    return best if counts[best] > 0 else None


def fit_longterm_trend(years, z, s2, smoothing_strength=5.0, at=None) -> TrendEstimate:
    """Weighted local linear trend with a Gaussian kernel.

    ``smoothing_strength`` is the kernel bandwidth in years. Each point
    carries weight ``1 / (s2 + 0.01)`` on top of the kernel weight. With a
    single distinct year the trend is the weighted mean.
    """
    years = np.asarray(years, dtype=float)
    z = np.asarray(z, dtype=float)
    base_w = 1.0 / (np.asarray(s2, dtype=float) + TREND_VARIANCE_FLOOR)
    if at is None:
        at = np.unique(years)
    at = np.asarray(at, dtype=float)
    if len(z) == 0:
        raise ValueError("need at least one reference observation")
    out = np.empty(len(at))
    if np.unique(years).size == 1:
        out[:] = np.sum(base_w * z) / np.sum(base_w)
        return TrendEstimate(at.astype(int), out)
    for k, t0 in enumerate(at):
        d = years - t0
        w = base_w * np.exp(-0.5 * (d / smoothing_strength) ** 2)
        sw, swd, swdd = w.sum(), (w * d).sum(), (w * d * d).sum()
        swz, swdz = (w * z).sum(), (w * d * z).sum()
        det = sw * swdd - swd * swd
        if sw <= 0 or det <= 1e-12 * sw * swdd:
            out[k] = swz / sw if sw > 0 else np.sum(base_w * z) / np.sum(base_w)
        else:
            out[k] = (swdd * swz - swd * swdz) / det
    return TrendEstimate(at.astype(int), out)


def flag_trend_outliers(residuals, top_fraction=0.10):
    """Step 3: flag absolute residuals strictly above the (1 - top_fraction) quantile."""
    r = np.abs(np.asarray(residuals, dtype=float))
    if r.size == 0 or top_fraction <= 0:
        return np.zeros(r.size, dtype=bool)
    threshold = np.quantile(r, 1.0 - min(top_fraction, 1.0), method="linear")
    return r > threshold


def classify_possible_outliers(
    df,
    rules=DEFAULT_RULES,
    top_fraction=0.10,
    bandwidth=5.0,
    overrides: Sequence = (),
) -> OutlierClassification:
    """Run all three steps per population and apply overrides.

    ``df`` is a validated observation frame (see
    :func:`nosmodel.domain.check_observations`). Indicators are classified
    separately; with more than one indicator present, ``reference_source``
    is keyed by ``(indicator, population)`` instead of population.
    """
    n = len(df)
    flag1, reason = flag_documented_concerns(df, rules)
    reason = reason.astype(object)
    outlying = flag1.copy()
    refs = {}
    pops = df["population"].to_numpy()
    sources = df["source_type"].to_numpy()
    indicators = df["indicator"].to_numpy() if "indicator" in df else np.full(n, "")
    several = len(pd.unique(indicators)) > 1
    ref_of_row = np.full(n, "", dtype=object)
    groups = sorted(set(zip(indicators.tolist(), pops.tolist())))
    for ind, pop in groups:
        rows = np.flatnonzero((pops == pop) & (indicators == ind))
        sub = df.iloc[rows]
        ref = select_reference_source(sub, flag1[rows])
        refs[(ind, pop) if several else pop] = ref
        ref_of_row[rows] = ref or ""
        if ref is None:
            fresh = rows[~flag1[rows]]
            outlying[fresh] = True
            reason[fresh] = TRIGGER_NO_REFERENCE
            continue
        in_ref = rows[(sources[rows] == ref) & ~flag1[rows]]
        others = rows[(sources[rows] != ref) & ~flag1[rows]]
        outlying[others] = True
        reason[others] = TRIGGER_NOT_REFERENCE
        yrs = df["year"].to_numpy()[in_ref]
        z = df["z"].to_numpy()[in_ref]
        trend = fit_longterm_trend(yrs, z, df["s2"].to_numpy()[in_ref], bandwidth)
        hit = in_ref[flag_trend_outliers(z - trend.at(yrs), top_fraction)]
        outlying[hit] = True
        reason[hit] = TRIGGER_TREND

    ids = df["id"].to_numpy()
    override_set = set(overrides)
    unknown = override_set - set(ids.tolist())
    if unknown:
        raise ValueError(f"override ids not in data: {sorted(unknown)}")
    forced = np.isin(ids, list(override_set))
    outlying[forced] = False
    reason[forced] = TRIGGER_OVERRIDE

    table = pd.DataFrame(
        {
            "id": ids,
            "population": pops,
            "possibly_outlying": outlying,
            "reference_source": ref_of_row,
            "trigger": np.where(outlying | forced, reason, ""),
        }
    )
    return OutlierClassification(table=table, reference_source=refs)


class OutlierClassifier(BaseEstimator, TransformerMixin):
    """Transformer that labels observations as possibly outlying.

    ``fit`` runs the classification on an observation table; ``transform``
    returns the table with a ``possibly_outlying`` column added, ready for
    :class:`nosmodel.NOSEstimator`.

    Parameters
    ----------
    top_fraction : float, default 0.1
        Share of the reference category flagged by the trend-residual step.
    bandwidth : float, default 5.0
        Gaussian kernel bandwidth (years) of the long-term trend.
    overrides : sequence of ids
        Observations forced to be non-outlying.
    rules : sequence of PreYearRule, optional
        Step-1 rules; defaults to flagging DHS before 1990.
    """

    def __init__(self, top_fraction=0.1, bandwidth=5.0, overrides=(), rules=None):
        self.top_fraction = top_fraction
        self.bandwidth = bandwidth
        self.overrides = overrides
        self.rules = rules

    def fit(self, X, y=None):
        df = check_observations(X)
        if not 0 <= self.top_fraction <= 1:
            raise ValueError("top_fraction must lie in [0, 1]")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        rules = DEFAULT_RULES if self.rules is None else tuple(self.rules)
        self.classification_ = classify_possible_outliers(
            df, rules, self.top_fraction, self.bandwidth, tuple(self.overrides)
        )
        self.reference_source_ = self.classification_.reference_source
        return self

    def transform(self, X):
        check_is_fitted(self, "classification_")
        out = X.copy()
        out["possibly_outlying"] = self.classification_.flags_for(out["id"].tolist())
        return out
