"""Synthetic data from the generative model, plus brute-force oracles.

The oracles here are deliberately naive (dense covariance, explicit
determinant, coordinate-wise differences) so they stay independent of the
structured code paths they check.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .datamodel import SOURCE_ERROR_TYPES, DataModelParams, ErrorStructure, horseshoe_scale, total_error_variance
from .domain import OBSERVATION_COLUMNS, SOURCE_TYPES, LatentGrid, inv_logit

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class Injection:
    population: int
    year: int
    source: str
    shift: float


@dataclass
class SimDesign:
    """Everything needed to generate one synthetic data set.

    ``obs_per_source`` counts observations per population; their years are
    drawn without replacement from the grid. Observations from
    ``outlier_sources`` receive a horseshoe outlier error. Injections add a
    fixed logit-scale shift to the matching observation, creating it first
    if the design did not produce one at that population, year and source.
    """

    n_populations: int = 3
    n_years: int = 15
    start_year: int = 2000
    obs_per_source: dict = field(
        default_factory=lambda: {"DHS": 3, "MICS": 2, "PMA": 4, "National": 2, "Other": 0}
    )
    source_scale: dict = field(
        default_factory=lambda: {"MICS": 0.19, "PMA": 0.1, "National": 0.015, "Other": 0.1}
    )
    char_scale: float = 0.1
    char_fraction: float = 0.0
    tau: float = 0.04
    slab: float = 1.0
    rho_pma: float = 0.8
    outlier_sources: tuple = ("MICS", "PMA", "National", "Other")
    level_mean: float = -1.0
    level_sd: float = 0.5
    slope_mean: float = 0.08
    slope_sd: float = 0.05
    smoothing_sd: float = 0.03
    eta: Optional[np.ndarray] = None
    n_eff_range: tuple = (500.0, 3000.0)
    sampling_variance_scale: float = 1.0
    injections: list = field(default_factory=list)
    indicator: str = "primary_proportion"
    seed: int = 0

    def __post_init__(self):
        if self.n_populations < 1 or self.n_years < 1:
            raise ValueError("population and year counts must be positive")
        for src, k in self.obs_per_source.items():
            if src not in SOURCE_TYPES:
                raise ValueError(f"unknown source type {src!r}")
            if not 0 <= int(k) <= self.n_years:
                raise ValueError(f"{src}: observation count {k} must be within 0..n_years")
        for src in self.outlier_sources:
            if src not in SOURCE_TYPES:
                raise ValueError(f"unknown outlier source {src!r}")
        if not 0 <= self.rho_pma < 1:
            raise ValueError("rho_pma must lie in [0, 1)")
        if self.eta is not None:
            self.eta = np.asarray(self.eta, dtype=float)
            if self.eta.shape != (self.n_populations, self.n_years):
                raise ValueError("eta must have shape (n_populations, n_years)")
        self.injections = [i if isinstance(i, Injection) else Injection(**i) for i in self.injections]
        for inj in self.injections:
            if not np.isfinite(inj.shift):
                raise ValueError("injection shifts must be finite")
            if not 0 <= inj.population < self.n_populations:
                raise ValueError(f"injection population {inj.population} out of range")
            if not self.start_year <= inj.year < self.start_year + self.n_years:
                raise ValueError(f"injection year {inj.year} off the grid")
        if not 0 <= self.char_fraction <= 1:
            raise ValueError("char_fraction must lie in [0, 1]")

    @property
    def years(self):
        return np.arange(self.start_year, self.start_year + self.n_years)

    @property
    def populations(self):
        width = max(2, len(str(self.n_populations)))
        return [f"P{c + 1:0{width}d}" for c in range(self.n_populations)]

    def to_dict(self):
        d = asdict(self)
        d["eta"] = None if self.eta is None else self.eta.tolist()
        d["outlier_sources"] = list(self.outlier_sources)
        d["n_eff_range"] = list(self.n_eff_range)
        return d


@dataclass
class SimulatedData:
    observations: pd.DataFrame
    truth: LatentGrid
    params: DataModelParams
    injected_ids: list


def _draw_eta(design, rng):
    if design.eta is not None:
        return design.eta.copy()
    C, T = design.n_populations, design.n_years
    eta = np.empty((C, T))
    eta[:, 0] = rng.normal(design.level_mean, design.level_sd, size=C)
    if T > 1:
        slope = rng.normal(design.slope_mean, design.slope_sd, size=C)
        eta[:, 1] = eta[:, 0] + slope
        for t in range(2, T):
            slope = slope + rng.normal(0.0, design.smoothing_sd, size=C)
            eta[:, t] = eta[:, t - 1] + slope
    return eta


def simulate_dataset(design: SimDesign) -> SimulatedData:
    """Draw one data set from the NOS generative model.

    Sampling variances are drawn on the logit scale from the effective
    sample size at the true value, and the proportion-scale standard error
    written to the table is chosen so that the delta method maps it back to
    exactly that logit variance.
    """
    rng = np.random.default_rng(design.seed)
    eta = _draw_eta(design, rng)
    years = design.years
    pops = design.populations

    rows = []
    for c in range(design.n_populations):
        for src in SOURCE_TYPES:
            k = int(design.obs_per_source.get(src, 0))
            if k == 0:
                continue
            t_idx = np.sort(rng.choice(design.n_years, size=k, replace=False))
            for t in t_idx:
                rows.append((c, int(t), src))
    for inj in design.injections:
        t = inj.year - design.start_year
        if not any(r == (inj.population, t, inj.source) for r in rows):
            rows.append((inj.population, t, inj.source))

    n = len(rows)
    c_idx = np.array([r[0] for r in rows], dtype=int)
    t_idx = np.array([r[1] for r in rows], dtype=int)
    src = np.array([r[2] for r in rows], dtype=object)
    truth_eta = eta[c_idx, t_idx]

    lo, hi = design.n_eff_range
    n_eff = rng.uniform(lo, hi, size=n)
    p_true = inv_logit(truth_eta)
    s2 = design.sampling_variance_scale / (n_eff * p_true * (1.0 - p_true))
    in_char = rng.random(n) < design.char_fraction
    outlying = np.isin(src, list(design.outlier_sources))
    gamma = np.abs(rng.standard_cauchy(size=n))

    src_sd = np.array([design.source_scale.get(s, 0.0) if s != "DHS" else 0.0 for s in src])
    out_sd = np.where(outlying, horseshoe_scale(design.tau, design.slab, gamma), 0.0)
    char_sd = np.where(in_char, design.char_scale, 0.0)

    # independent observations: each error type drawn separately
    err = (
        np.sqrt(s2) * rng.standard_normal(n)
        + src_sd * rng.standard_normal(n)
        + char_sd * rng.standard_normal(n)
        + out_sd * rng.standard_normal(n)
    )
    # PMA series: total error drawn jointly with AR correlation
    series = np.full(n, None, dtype=object)
    is_pma = src == "PMA"
    total_sd = np.sqrt(s2 + src_sd**2 + char_sd**2 + out_sd**2)
    for c in np.unique(c_idx[is_pma]):
        rows_c = np.flatnonzero(is_pma & (c_idx == c))
        rows_c = rows_c[np.argsort(t_idx[rows_c], kind="mergesort")]
        series[rows_c] = "PMA1"
        # standardized errors follow x_j = a x_{j-1} + sqrt(1 - a^2) e_j with
        # a = rho ** gap, which gives corr rho ** |t_j - t_l| for every pair
        # and stays valid when some sds are zero
        x = rng.standard_normal(len(rows_c))
        a = design.rho_pma ** np.diff(t_idx[rows_c])
        for j in range(1, len(rows_c)):
            x[j] = a[j - 1] * x[j - 1] + np.sqrt(1.0 - a[j - 1] ** 2) * x[j]
        err[rows_c] = total_sd[rows_c] * x

    z = truth_eta + err
    injected = np.zeros(n, dtype=bool)
    for inj in design.injections:
        t = inj.year - design.start_year
        hit = np.flatnonzero((c_idx == inj.population) & (t_idx == t) & (src == inj.source))
        z[hit] += inj.shift
        injected[hit] = True

    value = inv_logit(z)
    se = np.sqrt(s2) * value * (1.0 - value)
    ids = np.arange(1, n + 1)
    df = pd.DataFrame(
        {
            "id": ids,
            "population": np.asarray(pops, dtype=object)[c_idx],
            "year": years[t_idx],
            "indicator": design.indicator,
            "value": value,
            "se_proportion": se,
            "n_eff": np.nan,
            "source_type": src,
            "char_mismatch": in_char,
            "documented_concern": False,
            "pma_series_id": series,
        },
        columns=list(OBSERVATION_COLUMNS),
    )
    order = np.lexsort((src.astype(str), df["year"].to_numpy(), c_idx))
    df = df.iloc[order].reset_index(drop=True)
    df["id"] = np.arange(1, n + 1)
    injected = injected[order]
    gamma = gamma[order]
    outlying = outlying[order]
    params = DataModelParams(
        source_scale=dict(design.source_scale),
        char_scale=design.char_scale,
        tau=design.tau,
        slab=design.slab,
        local_scale={int(i): float(g) for i, g, o in zip(df["id"], gamma, outlying) if o},
        rho_pma=design.rho_pma,
    )
    return SimulatedData(
        observations=df,
        truth=LatentGrid(pops, years, eta),
        params=params,
        injected_ids=df.loc[injected, "id"].astype(int).tolist(),
    )


def dense_normal_logpdf(z, mean, cov):
    """Multivariate normal log density from the explicit determinant and a solve."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-14 * np.abs(cov).max()):
        raise ValueError("covariance is not symmetric")
    det = np.linalg.det(cov)
    if not det > 0 or np.linalg.eigvalsh(cov).min() <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    r = z - mean
    return float(-0.5 * (len(z) * LOG_2PI + np.log(det) + r @ np.linalg.solve(cov, r)))


def dense_covariance(structure: ErrorStructure, params: DataModelParams):
    """Full N x N covariance of all observations, assembled element by element."""
    var = total_error_variance(structure, params)
    sd = np.sqrt(var)
    n = structure.n_obs
    block_of = {}
    for b, rows in enumerate(structure.blocks):
        for r in rows:
            block_of[int(r)] = b
    years = structure.years[structure.year_index]
    cov = np.zeros((n, n))
    for j in range(n):
        for k in range(n):
            if j == k:
                cov[j, k] = var[j]
            elif j in block_of and block_of.get(k) == block_of[j]:
                cov[j, k] = sd[j] * sd[k] * params.rho_pma ** abs(int(years[j]) - int(years[k]))
    return cov


def dense_data_log_density(structure: ErrorStructure, eta, params: DataModelParams):
    """Oracle for the data log density: one dense normal over all observations."""
    eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
    mean = eta[structure.pop_index, structure.year_index]
    return dense_normal_logpdf(structure.z, mean, dense_covariance(structure, params))


def finite_difference_gradient(f, v, step=1e-5):
    """Central differences of ``f`` at ``v``, one coordinate at a time."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    for j in range(v.size):
        up = v.copy()
        dn = v.copy()
        up[j] += step
        dn[j] -= step
        out[j] = (f(up) - f(dn)) / (2.0 * step)
    return out
