"""NOS data model: error variances, PMA block covariances, densities and priors.

Every observation's logit-scale error is a sum of independent normal pieces:
known sampling error, a source-type error whose variance is shared by a
survey programme, a characteristic-mismatch error and, for possibly
outlying observations, a regularized-horseshoe outlier error. PMA
observations from one panel series are correlated with ``rho ** |gap|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

SOURCE_ERROR_TYPES = ("MICS", "PMA", "National", "Other")
LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, block, message):
        self.block = block
        super().__init__(f"covariance of PMA block {block} is not positive definite: {message}")


@dataclass
class DataModelParams:
    source_scale: dict
    char_scale: float
    tau: float
    slab: float
    local_scale: dict = field(default_factory=dict)
    rho_pma: float = 0.5

    def __post_init__(self):
        self.source_scale = {k: float(self.source_scale.get(k, 0.0)) for k in SOURCE_ERROR_TYPES}
        self.local_scale = {k: float(v) for k, v in self.local_scale.items()}


@dataclass(frozen=True)
class DataModelPriors:
    """Scales of the data-model priors (half-normal sds, half-Cauchy scales)."""

    source_sd: float = 0.5
    char_sd: float = 0.5
    tau_scale: float = 0.04
    slab_sd: float = 1.0
    local_scale: float = 1.0


@dataclass
class ErrorStructure:
    """Index sets and block layout of one data set.

    Arrays are aligned with the observation frame the structure was built
    from. ``source`` is the position in ``SOURCE_ERROR_TYPES`` or -1 for
    sources without a source-type error (DHS). ``outlier`` is the position
    in ``outlier_ids`` or -1. ``prev``/``gap`` link each PMA observation to
    its predecessor in the same series.
    """

    ids: np.ndarray
    populations: list
    years: np.ndarray
    pop_index: np.ndarray
    year_index: np.ndarray
    z: np.ndarray
    s2: np.ndarray
    source: np.ndarray
    in_char: np.ndarray
    outlier: np.ndarray
    outlier_ids: np.ndarray
    prev: np.ndarray
    gap: np.ndarray
    blocks: list
    block_keys: list
    independent: np.ndarray

    @property
    def n_obs(self):
        return len(self.ids)

    @property
    def cell(self):
        return self.pop_index * len(self.years) + self.year_index

    def position(self, obs_id):
        hits = np.flatnonzero(self.ids == obs_id)
        if len(hits) == 0:
            raise KeyError(f"observation {obs_id!r} is not part of this structure")
        return int(hits[0])

    def subset(self, keep):
        """Structure restricted to the observations where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        frame = self.frame()[keep]
        return build_error_structure(
            frame, frame["possibly_outlying"].to_numpy(), self.populations, self.years
        )

    def frame(self):
        src = np.array(("DHS",) + SOURCE_ERROR_TYPES, dtype=object)[self.source + 1]
        series = np.full(self.n_obs, None, dtype=object)
        for key, block in zip(self.block_keys, self.blocks):
            series[block] = key[1]
        return pd.DataFrame(
            {
                "id": self.ids,
                "population": np.asarray(self.populations, dtype=object)[self.pop_index],
                "year": self.years[self.year_index],
                "z": self.z,
                "s2": self.s2,
                "source_type": src,
                "char_mismatch": self.in_char,
                "possibly_outlying": self.outlier >= 0,
                "pma_series_id": series,
            }
        )


def build_error_structure(df, possibly_outlying=None, populations=None, years=None):
    """Index sets and PMA blocks for a validated observation frame.

    ``df`` needs the canonical columns plus ``z`` and ``s2`` (see
    :func:`nosmodel.domain.check_observations`). Source types other than DHS
    receive a source error; ``char_mismatch`` defines the characteristic set
    and ``possibly_outlying`` the outlier set.
    """
    n = len(df)
    if possibly_outlying is None:
        possibly_outlying = np.zeros(n, dtype=bool)
    possibly_outlying = np.asarray(possibly_outlying, dtype=bool)
    if populations is None:
        populations = sorted(df["population"].astype(str).unique())
    populations = list(populations)
    if years is None:
        years = np.arange(int(df["year"].min()), int(df["year"].max()) + 1)
    years = np.asarray(years, dtype=int)

    pop_lookup = {p: i for i, p in enumerate(populations)}
    try:
        pop_index = np.array([pop_lookup[str(p)] for p in df["population"]], dtype=int)
    except KeyError as exc:
        raise ValueError(f"population {exc.args[0]!r} is not on the grid") from None
    year_index = df["year"].to_numpy(dtype=int) - years[0] if len(years) else np.zeros(n, int)
    if n and (year_index.min() < 0 or year_index.max() >= len(years)):
        raise ValueError("observation years fall outside the latent grid")

    src_lookup = {s: i for i, s in enumerate(SOURCE_ERROR_TYPES)}
    source = np.array([src_lookup.get(s, -1) for s in df["source_type"]], dtype=int)
    outlier = np.full(n, -1, dtype=int)
    outlier[possibly_outlying] = np.arange(possibly_outlying.sum())
    ids = df["id"].to_numpy()

    prev = np.full(n, -1, dtype=int)
    gap = np.zeros(n, dtype=int)
    blocks, keys = [], []
    is_pma = (df["source_type"] == "PMA").to_numpy()
    if is_pma.any():
        sub = pd.DataFrame(
            {
                "row": np.flatnonzero(is_pma),
                "population": df["population"].astype(str).to_numpy()[is_pma],
                "series": df["pma_series_id"].astype(str).to_numpy()[is_pma],
                "year": df["year"].to_numpy(dtype=int)[is_pma],
            }
        )
        for key, grp in sub.groupby(["population", "series"], sort=True):
            grp = grp.sort_values("year", kind="mergesort")
            rows = grp["row"].to_numpy()
            yrs = grp["year"].to_numpy()
            if np.any(np.diff(yrs) == 0):
                raise ValueError(f"PMA block {key} has repeated years")
            prev[rows[1:]] = rows[:-1]
            gap[rows[1:]] = np.diff(yrs)
            blocks.append(rows)
            keys.append(tuple(key))
    in_block = np.zeros(n, dtype=bool)
    for b in blocks:
        in_block[b] = True

    return ErrorStructure(
        ids=ids,
        populations=populations,
        years=years,
        pop_index=pop_index,
        year_index=np.asarray(year_index, dtype=int),
        z=df["z"].to_numpy(dtype=float),
        s2=df["s2"].to_numpy(dtype=float),
        source=source,
        in_char=df["char_mismatch"].to_numpy(dtype=bool),
        outlier=outlier,
        outlier_ids=ids[possibly_outlying],
        prev=prev,
        gap=gap,
        blocks=blocks,
        block_keys=keys,
        independent=np.flatnonzero(~in_block),
    )


def horseshoe_scale(tau, slab, gamma):
    """Regularized-horseshoe outlier sd ``tau * gamma_tilde``.

    Rises from 0 at ``gamma = 0`` towards ``slab`` as ``gamma`` grows.
    Written as ``slab * u / sqrt(slab**2 + u**2)`` with ``u = tau * gamma``,
    which stays finite for huge ``gamma``.
    """
    u = np.asarray(tau, dtype=float) * np.asarray(gamma, dtype=float)
    slab = np.asarray(slab, dtype=float)
    with np.errstate(invalid="ignore"):
        out = slab * u / np.hypot(slab, u)
    out = np.where(u == 0, 0.0, np.where(np.isinf(u), slab, out))
    return float(out) if np.ndim(out) == 0 else out


def _vectors(structure: ErrorStructure, params: DataModelParams):
    src = np.array([params.source_scale[k] for k in SOURCE_ERROR_TYPES], dtype=float)
    try:
        gamma = np.array([params.local_scale[i] for i in structure.outlier_ids], dtype=float)
    except KeyError as exc:
        raise KeyError(f"missing local scale for possibly outlying observation {exc.args[0]!r}") from None
    return src, gamma


def total_error_variance(structure: ErrorStructure, params: DataModelParams):
    """Total logit-scale error variance of every observation."""
    src, gamma = _vectors(structure, params)
    return _total_variance(structure, src, params.char_scale, params.tau, params.slab, gamma)


def _total_variance(structure, src, char_scale, tau, slab, gamma):
    var = structure.s2.copy()
    has_src = structure.source >= 0
    var[has_src] += src[structure.source[has_src]] ** 2
    var[structure.in_char] += char_scale**2
    is_out = structure.outlier >= 0
    if is_out.any():
        var[is_out] += horseshoe_scale(tau, slab, gamma[structure.outlier[is_out]]) ** 2
    return var


def total_error_sd(obs, structure: ErrorStructure, params: DataModelParams):
    """Total error sd of one observation (given by id)."""
    i = structure.position(obs)
    var = structure.s2[i]
    if structure.source[i] >= 0:
        var += params.source_scale[SOURCE_ERROR_TYPES[structure.source[i]]] ** 2
    if structure.in_char[i]:
        var += params.char_scale**2
    if structure.outlier[i] >= 0:
        oid = structure.ids[i]
        if oid not in params.local_scale:
            raise KeyError(f"missing local scale for possibly outlying observation {oid!r}")
        var += horseshoe_scale(params.tau, params.slab, params.local_scale[oid]) ** 2
    return float(np.sqrt(var))


def build_covariance(block, structure: ErrorStructure, params: DataModelParams):
    """Dense covariance of one PMA block: ``sd_j * sd_l * rho ** |t_j - t_l|``."""
    block = np.asarray(block, dtype=int)
    sd = np.sqrt(total_error_variance(structure, params)[block])
    t = structure.years[structure.year_index[block]]
    lag = np.abs(t[:, None] - t[None, :])
    return np.outer(sd, sd) * params.rho_pma**lag


def _ar_terms(resid, sd, prev, gap, rho):
    """Log density and partials for independent + AR-linked observations.

    Within a PMA block the correlation ``rho ** |gap|`` is Markov, so the
    block density factorizes into one conditional per observation given its
    predecessor; this is the exact bidiagonal Cholesky factor of the block
    precision. Returns ``(logp, d/d resid, d/d sd, d/d rho)``.
    """
    x = resid / sd
    linked = prev >= 0
    a = np.zeros_like(x)
    a[linked] = rho ** gap[linked]
    v = 1.0 - a * a
    if np.any(v[linked] <= 0.0):
        raise FloatingPointError("conditional variance underflow in PMA block")
    x_prev = np.where(linked, x[np.maximum(prev, 0)], 0.0)
    e = x - a * x_prev
    logp = -0.5 * resid.size * LOG_2PI - np.sum(np.log(sd)) - 0.5 * np.sum(np.log(v)) - 0.5 * np.sum(e * e / v)

    w = e / v
    d_x = -w
    # each observation has at most one successor
    np.add.at(d_x, prev[linked], (w * a)[linked])
    d_resid = d_x / sd
    d_sd = -(1.0 + x * d_x) / sd
    d_a = a / v + w * x_prev - w * w * a
    d_rho = 0.0
    if linked.any() and rho > 0:
        g = gap[linked]
        d_rho = float(np.sum(d_a[linked] * g * rho ** (g - 1)))
    return logp, d_resid, d_sd, d_rho


def data_log_density(z, eta, structure: ErrorStructure, params: DataModelParams):
    """Log density of the transformed observations given the latent grid.

    Independent observations contribute univariate normal terms; PMA
    series contribute multivariate normal terms through a triangular
    factorization of each block covariance. ``z`` defaults to the
    structure's own transformed values; ``eta`` is a ``LatentGrid`` or a
    (populations, years) array.
    """
    z = structure.z if z is None else np.asarray(z, dtype=float)
    eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
    resid = z - eta[structure.pop_index, structure.year_index]
    sd = np.sqrt(total_error_variance(structure, params))
    if not 0.0 <= params.rho_pma < 1.0:
        raise ValueError(f"rho_pma must lie in [0, 1), got {params.rho_pma}")
    try:
        logp, *_ = _ar_terms(resid, sd, structure.prev, structure.gap, params.rho_pma)
    except FloatingPointError:
        for key, block in zip(structure.block_keys, structure.blocks):
            cov = build_covariance(block, structure, params)
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(key, str(exc)) from None
        raise
    return float(logp)


def _half_normal(x, sd):
    return np.log(2.0) - np.log(sd) - 0.5 * LOG_2PI - 0.5 * (x / sd) ** 2


def _half_cauchy(x, scale):
    return np.log(2.0 / (np.pi * scale)) - np.log1p((x / scale) ** 2)


def datamodel_log_prior(params: DataModelParams, priors: Optional[DataModelPriors] = None):
    """Log prior density of the data-model parameters."""
    priors = priors or DataModelPriors()
    src = np.array([params.source_scale[k] for k in SOURCE_ERROR_TYPES])
    gamma = np.array(list(params.local_scale.values()), dtype=float)
    scales = np.concatenate([src, [params.char_scale, params.tau, params.slab], gamma])
    if np.any(scales < 0) or not 0.0 <= params.rho_pma <= 1.0:
        return -np.inf
    lp = np.sum(_half_normal(src, priors.source_sd))
    lp += _half_normal(params.char_scale, priors.char_sd)
    lp += _half_cauchy(params.tau, priors.tau_scale)
    lp += _half_normal(params.slab, priors.slab_sd)
    lp += np.sum(_half_cauchy(gamma, priors.local_scale))
    return float(lp)


ERROR_TYPES = SOURCE_ERROR_TYPES + ("characteristic", "outlier")


def predictive_error_samples(draws, error_type, n, seed=None):
    """Posterior predictive draws of one error type on the logit scale.

    Each sample picks a stored posterior draw at random, then draws an
    error from that type's conditional law. Outlier errors use a fresh
    local scale from the half-Cauchy(0, 1) prior.
    """
    if error_type not in ERROR_TYPES:
        raise ValueError(f"unknown error type {error_type!r}; expected one of {ERROR_TYPES}")
    rng = np.random.default_rng(seed)
    if error_type == "outlier":
        tau = draws.flat("tau")
        slab = draws.flat("slab")
        pick = rng.integers(0, len(tau), size=n)
        gamma = np.abs(rng.standard_cauchy(size=n))
        scale = horseshoe_scale(tau[pick], slab[pick], gamma)
    else:
        name = "char_scale" if error_type == "characteristic" else f"source_scale[{error_type}]"
        values = draws.flat(name)
        pick = rng.integers(0, len(values), size=n)
        scale = values[pick]
    return rng.standard_normal(n) * scale
