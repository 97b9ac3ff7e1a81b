"""Observation records, scale transforms and sampling-variance helpers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

SOURCE_TYPES = ("DHS", "MICS", "PMA", "National", "Other")
INDICATORS = ("primary_proportion", "unmet_ratio")

# Column order of the observation CSV.
OBSERVATION_COLUMNS = (
    "id",
    "population",
    "year",
    "indicator",
    "value",
    "se_proportion",
    "n_eff",
    "source_type",
    "char_mismatch",
    "documented_concern",
    "pma_series_id",
)


_TINY = np.nextafter(0.0, 1.0)
_ONE_BELOW = np.nextafter(1.0, 0.0)


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a transform."""


class IngestionError(ValueError):
    """Raised when observation records fail validation.

    ``problems`` holds ``(row, reason)`` pairs for every offending row.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"row {row}: {reason}" for row, reason in self.problems]
        super().__init__("invalid observations:\n  " + "\n  ".join(lines))


def _check_open_unit(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError(f"{name} must lie strictly inside (0, 1), got {p!r}")
    return arr


def logit(p):
    """Log-odds ``ln(p / (1 - p))``; ``p`` must lie in (0, 1)."""
    arr = _check_open_unit(p)
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if np.ndim(out) == 0 else out


def inv_logit(x):
    """Logistic function, evaluated without overflow for large ``|x|``."""
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the result inside the open unit interval where float64 saturates
    np.clip(out, _TINY, _ONE_BELOW, out=out)
    return float(out) if out.ndim == 0 else out


def delta_logit_variance(p, var_p):
    """Move a proportion-scale variance to the logit scale (delta method)."""
    arr = _check_open_unit(p)
    var = np.asarray(var_p, dtype=float)
    if np.any(var < 0) or np.any(~np.isfinite(var)):
        raise DomainError(f"variance must be finite and >= 0, got {var_p!r}")
    out = var / (arr * (1.0 - arr)) ** 2
    return float(out) if np.ndim(out) == 0 else out


def impute_sampling_variance(p, n_eff):
    """Binomial variance ``p(1-p)/n_eff`` from an effective sample size."""
    arr = _check_open_unit(p)
    n = np.asarray(n_eff, dtype=float)
    if np.any(~(n > 0)):
        raise DomainError(f"effective sample size must be positive, got {n_eff!r}")
    out = arr * (1.0 - arr) / n
    return float(out) if np.ndim(out) == 0 else out


def unmet_ratio(y1, y2):
    """Unmet need among non-users of modern methods, ``y2 / (1 - y1)``."""
    a = _check_open_unit(y1, "y1")
    b = _check_open_unit(y2, "y2")
    if np.any(b >= 1.0 - a):
        raise DomainError("categories must sum below 1 (y2 < 1 - y1)")
    out = b / (1.0 - a)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Observation:
    id: int
    population: str
    year: int
    value: float
    source_type: str
    indicator: str = "primary_proportion"
    sampling_variance_proportion_scale: Optional[float] = None
    effective_sample_size: Optional[float] = None
    char_mismatch: bool = False
    documented_concern: bool = False
    pma_series_id: Optional[str] = None

    def __post_init__(self):
        problems = _record_problems(
            self.value,
            self.sampling_variance_proportion_scale,
            self.effective_sample_size,
            self.source_type,
            self.indicator,
            self.pma_series_id,
        )
        if problems:
            raise IngestionError([(self.id, p) for p in problems])


@dataclass(frozen=True)
class TransformedObservation:
    z: float
    logit_sampling_variance: float


def transform_observation(obs: Observation) -> TransformedObservation:
    """Logit the value and carry its sampling variance to the logit scale.

    A stored proportion-scale variance takes precedence over imputation
    from the effective sample size.
    """
    var_p = obs.sampling_variance_proportion_scale
    if var_p is None:
        var_p = impute_sampling_variance(obs.value, obs.effective_sample_size)
    return TransformedObservation(
        z=logit(obs.value),
        logit_sampling_variance=delta_logit_variance(obs.value, var_p),
    )


@dataclass
class LatentGrid:
    """Logit-scale latent indicator on a population x year grid."""

    populations: list
    years: np.ndarray
    eta: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.populations = list(self.populations)
        self.years = np.asarray(self.years, dtype=int)
        self.eta = np.asarray(self.eta, dtype=float)
        if self.eta.shape != (len(self.populations), len(self.years)):
            raise DomainError(
                f"eta has shape {self.eta.shape}, expected "
                f"{(len(self.populations), len(self.years))}"
            )
        if len(self.years) and np.any(np.diff(self.years) != 1):
            raise DomainError("years must be a contiguous increasing range")
        if not np.all(np.isfinite(self.eta)):
            raise DomainError("eta must be finite")

    @property
    def phi(self):
        return inv_logit(self.eta)

    def to_frame(self):
        c, t = np.meshgrid(np.arange(len(self.populations)), np.arange(len(self.years)), indexing="ij")
        return pd.DataFrame(
            {
                "population": np.asarray(self.populations, dtype=object)[c.ravel()],
                "year": self.years[t.ravel()],
                "eta": self.eta.ravel(),
                "phi": inv_logit(self.eta.ravel()),
            }
        )


def _record_problems(value, var_p, n_eff, source, indicator, series):
    problems = []
    if value is None or not np.isfinite(value) or not 0.0 < value < 1.0:
        problems.append(f"value {value!r} outside (0, 1)")
    has_var = var_p is not None and not _isnan(var_p)
    has_n = n_eff is not None and not _isnan(n_eff)
    if not has_var and not has_n:
        problems.append("needs a sampling variance or an effective sample size")
    if has_var and not (np.isfinite(var_p) and var_p >= 0):
        problems.append(f"sampling variance {var_p!r} must be finite and >= 0")
    if has_n and not (np.isfinite(n_eff) and n_eff > 0):
        problems.append(f"effective sample size {n_eff!r} must be positive")
    if source not in SOURCE_TYPES:
        problems.append(f"unknown source type {source!r}")
    if indicator not in INDICATORS:
        problems.append(f"unknown indicator {indicator!r}")
    has_series = series is not None and not _isnan(series) and str(series) != ""
    if source == "PMA" and not has_series:
        problems.append("PMA observation without pma_series_id")
    if source != "PMA" and has_series:
        problems.append("pma_series_id set on a non-PMA observation")
    return problems


def _isnan(x):
    try:
        return bool(np.isnan(x))
    except TypeError:
        return False


def _as_bool(col):
    if col.dtype == bool:
        return col
    mapping = {"true": True, "false": False, "1": True, "0": False, "": False, "nan": False}
    out = col.astype(str).str.strip().str.lower().map(mapping)
    if out.isna().any():
        bad = col[out.isna()].tolist()
        raise IngestionError([(None, f"cannot read {bad[:3]!r} as boolean")])
    return out.astype(bool)


def check_observations(data, indicator: Optional[str] = None) -> pd.DataFrame:
    """Validate observations and return them as a canonical frame.

    ``data`` may be a DataFrame in the CSV schema or an iterable of
    :class:`Observation`. Years are rounded to the nearest integer. The
    result carries two derived columns, ``z`` and ``s2`` (logit value and
    logit-scale sampling variance). Raises :class:`IngestionError` listing
    every offending row.
    """
    if isinstance(data, pd.DataFrame):
        df = data.copy()
    else:
        df = observations_to_frame(data)
    if len(df) == 0:
        raise IngestionError([(None, "no observations")])
    missing = [c for c in ("id", "population", "year", "value", "source_type") if c not in df]
    if missing:
        raise IngestionError([(None, f"missing columns {missing}")])
    for col, default in (
        ("indicator", "primary_proportion"),
        ("se_proportion", np.nan),
        ("n_eff", np.nan),
        ("char_mismatch", False),
        ("documented_concern", False),
        ("pma_series_id", None),
    ):
        if col not in df:
            df[col] = default
    df["char_mismatch"] = _as_bool(df["char_mismatch"])
    df["documented_concern"] = _as_bool(df["documented_concern"])
    df["population"] = df["population"].astype(str)
    df["se_proportion"] = pd.to_numeric(df["se_proportion"], errors="coerce")
    df["n_eff"] = pd.to_numeric(df["n_eff"], errors="coerce")
    df["value"] = pd.to_numeric(df["value"], errors="coerce")
    year = pd.to_numeric(df["year"], errors="coerce").to_numpy(dtype=float)
    series = df["pma_series_id"].astype(object).where(df["pma_series_id"].notna(), None)
    series = series.map(lambda s: None if s is None or str(s) == "" else str(s))
    df["pma_series_id"] = series

    problems = []
    if df["id"].duplicated().any():
        for rid in df.loc[df["id"].duplicated(), "id"]:
            problems.append((rid, "duplicate id"))
    for rid, yr in zip(df["id"], year):
        if not np.isfinite(yr):
            problems.append((rid, "year is not a number"))
    for row in df.itertuples(index=False):
        var_p = row.se_proportion**2 if np.isfinite(row.se_proportion) else None
        for reason in _record_problems(
            row.value, var_p, row.n_eff, row.source_type, row.indicator, row.pma_series_id
        ):
            problems.append((row.id, reason))
    if problems:
        raise IngestionError(problems)

    df["year"] = np.floor(year + 0.5).astype(int)
    pma = df[df["source_type"] == "PMA"]
    dup = pma.duplicated(["population", "pma_series_id", "year"], keep=False)
    if dup.any():
        raise IngestionError(
            [(rid, "duplicate (population, pma_series_id, year)") for rid in pma.loc[dup, "id"]]
        )
    if indicator is not None:
        df = df[df["indicator"] == indicator]
        if len(df) == 0:
            raise IngestionError([(None, f"no observations for indicator {indicator!r}")])

    value = df["value"].to_numpy(dtype=float)
    se = df["se_proportion"].to_numpy(dtype=float)
    var_p = np.where(np.isfinite(se), se**2, np.nan)
    use_n = ~np.isfinite(var_p)
    if use_n.any():
        var_p[use_n] = impute_sampling_variance(value[use_n], df["n_eff"].to_numpy(dtype=float)[use_n])
    df["z"] = logit(value)
    df["s2"] = delta_logit_variance(value, var_p)
    return df.reset_index(drop=True)


def observations_to_frame(observations: Iterable[Observation]) -> pd.DataFrame:
    rows = []
    for obs in observations:
        d = asdict(obs)
        var_p = d.pop("sampling_variance_proportion_scale")
        d["se_proportion"] = np.sqrt(var_p) if var_p is not None else np.nan
        n = d.pop("effective_sample_size")
        d["n_eff"] = n if n is not None else np.nan
        rows.append(d)
    return pd.DataFrame(rows, columns=list(OBSERVATION_COLUMNS))


def frame_to_observations(df: pd.DataFrame) -> list:
    out = []
    for row in df.itertuples(index=False):
        se = row.se_proportion
        n = row.n_eff
        out.append(
            Observation(
                id=int(row.id),
                population=str(row.population),
                year=int(row.year),
                value=float(row.value),
                source_type=row.source_type,
                indicator=row.indicator,
                sampling_variance_proportion_scale=float(se) ** 2 if np.isfinite(se) else None,
                effective_sample_size=float(n) if np.isfinite(n) else None,
                char_mismatch=bool(row.char_mismatch),
                documented_concern=bool(row.documented_concern),
                pma_series_id=row.pma_series_id,
            )
        )
    return out


def grid_for(df: pd.DataFrame, populations: Optional[Sequence] = None, years=None):
    """Population list and contiguous year range covering ``df``."""
    if populations is None:
        populations = sorted(df["population"].unique())
    if years is None:
        years = np.arange(int(df["year"].min()), int(df["year"].max()) + 1)
    return list(populations), np.asarray(years, dtype=int)
