"""Scikit-learn style estimator wrapping classification, model and sampler."""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datamodel import SOURCE_ERROR_TYPES, DataModelPriors, build_error_structure, horseshoe_scale
from .domain import check_observations, grid_for, inv_logit
from .inference.diagnostics import diagnostics
from .inference.model import NOSPosterior
from .inference.sampling import sample
from .inference.summary import DEFAULT_QUANTILES, summarize, summarize_indicator
from .preprocess import OutlierClassifier


class NOSEstimator(BaseEstimator):
    """Bayesian estimates of a latent proportion from heterogeneous surveys.

    ``fit`` takes an observation table (see :func:`nosmodel.domain.check_observations`).
    If the table has a ``possibly_outlying`` column (for instance the output
    of :class:`nosmodel.OutlierClassifier`) it defines the outlier set;
    otherwise the classifier runs inside ``fit`` with this estimator's
    preprocessing options.

    Parameters
    ----------
    indicator : str
        Which indicator's rows to model.
    process : str
        Registered process model name.
    source_prior_sd, char_prior_sd, slab_prior_sd : float
        Half-normal prior sds of the source-type scales, the
        characteristic scale and the slab scale.
    tau_scale : float
        Half-Cauchy scale of the global outlier scale.
    outlier_term : bool
        If false no observation gets an outlier error.
    top_fraction, bandwidth, overrides
        Passed to the outlier classifier when no flags are supplied.
    chains, warmup, draws, seed, target_accept, max_depth, n_jobs
        Sampler settings.

    Attributes
    ----------
    draws_ : PosteriorDraws
    structure_ : ErrorStructure
    possibly_outlying_ : ndarray of bool
    """

    def __init__(
        self,
        indicator="primary_proportion",
        process="rw2",
        source_prior_sd=0.5,
        char_prior_sd=0.5,
        tau_scale=0.04,
        slab_prior_sd=1.0,
        outlier_term=True,
        top_fraction=0.1,
        bandwidth=5.0,
        overrides=(),
        chains=4,
        warmup=500,
        draws=500,
        seed=0,
        target_accept=0.9,
        max_depth=10,
        n_jobs=1,
    ):
        self.indicator = indicator
        self.process = process
        self.source_prior_sd = source_prior_sd
        self.char_prior_sd = char_prior_sd
        self.tau_scale = tau_scale
        self.slab_prior_sd = slab_prior_sd
        self.outlier_term = outlier_term
        self.top_fraction = top_fraction
        self.bandwidth = bandwidth
        self.overrides = overrides
        self.chains = chains
        self.warmup = warmup
        self.draws = draws
        self.seed = seed
        self.target_accept = target_accept
        self.max_depth = max_depth
        self.n_jobs = n_jobs

    def _priors(self):
        return DataModelPriors(
            source_sd=self.source_prior_sd,
            char_sd=self.char_prior_sd,
            tau_scale=self.tau_scale,
            slab_sd=self.slab_prior_sd,
        )

    def _outlier_flags(self, X, df):
        if "possibly_outlying" in df:
            flags = df["possibly_outlying"]
            if flags.dtype != bool:
                flags = flags.astype(str).str.lower().isin(["true", "1"])
            return flags.to_numpy(dtype=bool)
        clf = OutlierClassifier(self.top_fraction, self.bandwidth, self.overrides).fit(X)
        self.classification_ = clf.classification_
        return clf.classification_.flags_for(df["id"].tolist())

    def build_model(self, X):
        """Validated frame and posterior for ``X`` without sampling."""
        df = check_observations(X, self.indicator)
        flags = self._outlier_flags(X, df)
        if not self.outlier_term:
            flags = np.zeros(len(df), dtype=bool)
        populations, years = grid_for(df)
        structure = build_error_structure(df, flags, populations, years)
        return df, flags, NOSPosterior(structure, self._priors(), self.process)

    def fit(self, X, y=None):
        if self.chains < 2:
            raise ValueError("chains must be at least 2 so convergence can be diagnosed")
        df, flags, model = self.build_model(X)
        self.observations_ = df
        self.possibly_outlying_ = flags
        self.structure_ = model.structure
        self.model_ = model
        self.draws_ = sample(
            model,
            chains=self.chains,
            warmup=self.warmup,
            draws=self.draws,
            seed=self.seed,
            target_accept=self.target_accept,
            max_depth=self.max_depth,
            n_jobs=self.n_jobs,
        )
        return self

    # -- results ----------------------------------------------------------------

    def summary(self, quantiles=DEFAULT_QUANTILES, names=None):
        check_is_fitted(self, "draws_")
        return summarize(self.draws_, quantiles, names)

    def indicator_summary(self, interval=0.90):
        check_is_fitted(self, "draws_")
        return summarize_indicator(self.draws_, interval)

    def diagnostics(self, names=None):
        check_is_fitted(self, "draws_")
        return diagnostics(self.draws_, names)

    def predict(self, X):
        """Posterior median of the proportion at each row's population and year."""
        check_is_fitted(self, "draws_")
        table = self.indicator_summary().set_index(["population", "year"])["phi_median"]
        keys = list(zip(X["population"].astype(str), np.floor(pd.to_numeric(X["year"]) + 0.5).astype(int)))
        missing = [k for k in keys if k not in table.index]
        if missing:
            raise ValueError(f"no estimates for {missing[:3]} (outside the fitted grid)")
        return table.loc[keys].to_numpy()

    def error_sd_draws(self):
        """Total error sd of every observation for every pooled draw."""
        check_is_fitted(self, "draws_")
        return observation_error_sd(self.draws_, self.structure_)

    def observation_summary(self):
        """Per observation: posterior median total error sd and latent median."""
        check_is_fitted(self, "draws_")
        st = self.structure_
        sd = np.median(self.error_sd_draws(), axis=0)
        eta = self.draws_.eta().reshape(-1, len(st.populations), len(st.years))
        eta_obs = np.median(eta[:, st.pop_index, st.year_index], axis=0)
        return pd.DataFrame(
            {
                "id": st.ids,
                "population": np.asarray(st.populations, dtype=object)[st.pop_index],
                "year": st.years[st.year_index],
                "z": st.z,
                "value": inv_logit(st.z),
                "possibly_outlying": st.outlier >= 0,
                "total_error_sd_median": sd,
                "eta_median": eta_obs,
            }
        )


def observation_error_sd(draws, structure):
    """Array ``(pooled draws, observations)`` of total logit-scale error sds."""
    n_total = draws.n_chains * draws.n_draws
    var = np.tile(structure.s2, (n_total, 1))
    src = np.stack([draws.flat(f"source_scale[{k}]") for k in SOURCE_ERROR_TYPES], axis=1)
    has_src = structure.source >= 0
    var[:, has_src] += src[:, structure.source[has_src]] ** 2
    var[:, structure.in_char] += draws.flat("char_scale")[:, None] ** 2
    is_out = structure.outlier >= 0
    if is_out.any():
        gamma = np.stack([draws.flat(f"local_scale[{i}]") for i in structure.outlier_ids.tolist()], axis=1)
        tau = draws.flat("tau")[:, None]
        slab = draws.flat("slab")[:, None]
        var[:, is_out] += horseshoe_scale(tau, slab, gamma[:, structure.outlier[is_out]]) ** 2
    return np.sqrt(var)
