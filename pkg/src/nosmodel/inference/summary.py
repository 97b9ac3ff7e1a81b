"""Posterior summaries in the median-and-interval reporting style."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..domain import inv_logit

DEFAULT_QUANTILES = (0.025, 0.05, 0.5, 0.95, 0.975)


def _qlabel(q):
    return f"q{100 * q:g}".replace(".", "_")


def summarize(draws, quantiles=DEFAULT_QUANTILES, names=None):
    """Mean, median and quantiles for every (or the named) scalar parameter."""
    names = draws.columns if names is None else list(names)
    idx = [draws.columns.index(n) for n in names]
    flat = draws.values[:, :, idx].reshape(-1, len(idx))
    qs = np.quantile(flat, quantiles, axis=0) if len(flat) else np.full((len(quantiles), len(idx)), np.nan)
    table = {"parameter": names, "mean": flat.mean(axis=0), "median": np.median(flat, axis=0)}
    for q, row in zip(quantiles, qs):
        table[_qlabel(q)] = row
    return pd.DataFrame(table)


def summarize_indicator(draws, interval=0.90):
    """Median and central interval of the proportion scale, per population-year.

    Quantiles are taken after mapping each latent draw through the inverse
    logit.
    """
    eta = draws.eta()
    phi = inv_logit(eta.reshape(-1, *eta.shape[2:]))
    # rounded so that interval 0.9 gives exactly the 5% and 95% quantiles
    lo = round((1.0 - interval) / 2.0, 12)
    hi = round(1.0 - lo, 12)
    q = np.quantile(phi, [lo, 0.5, hi], axis=0)
    pops = draws.metadata["populations"]
    years = draws.metadata["years"]
    c, t = np.meshgrid(np.arange(len(pops)), np.arange(len(years)), indexing="ij")
    return pd.DataFrame(
        {
            "population": np.asarray(pops, dtype=object)[c.ravel()],
            "year": np.asarray(years)[t.ravel()],
            "phi_median": q[1].ravel(),
            f"phi_{_qlabel(lo)}": q[0].ravel(),
            f"phi_{_qlabel(hi)}": q[2].ravel(),
        }
    )
