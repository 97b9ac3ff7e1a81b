"""Rank-normalized split R-hat and bulk effective sample size."""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import stats


def _split_chains(x):
    """(chains, draws) -> (2 * chains, draws // 2), dropping a middle draw if odd."""
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half :]], axis=0)


def _rank_normalize(x):
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    size = x.size
    return stats.norm.ppf((ranks - 0.375) / (size + 0.25))


def _rhat(x):
    m, n = x.shape
    chain_mean = x.mean(axis=1)
    chain_var = x.var(axis=1, ddof=1)
    between = n * chain_mean.var(ddof=1)
    within = chain_var.mean()
    if within == 0:
        return np.inf if between > 0 else np.nan
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocov(x):
    """Autocovariance of each row via FFT (biased normalisation)."""
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    centred = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centred, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def _ess(x):
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    m, n = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus == 0:
        return np.nan
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus if n > 1 else 0.0
    if n > 1:
        rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if even > 0 and max_t + 1 < n:
        rho[max_t + 1] = even
    # enforce a monotone sequence of pair sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * np.sum(rho[: max(max_t, 0) + 1]) + (rho[max_t + 1] if max_t + 1 < n else 0.0)
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def rhat(x):
    """Split R-hat: the largest of the rank-normalized bulk and folded
    versions and the classic version on the raw draws.

    Rank normalization caps how large R-hat can get when chains separate
    completely (about 1.5 for four chains), so the raw-scale value is
    included to keep gross disagreement clearly visible.
    """
    x = np.asarray(x, dtype=float)
    split = _split_chains(x)
    bulk = _rhat(_rank_normalize(split))
    folded = np.abs(split - np.median(split))
    tail = _rhat(_rank_normalize(folded))
    values = [bulk, tail]
    if np.all(np.isfinite(split)):
        values.append(_rhat(split))
    values = [v for v in values if not np.isnan(v)]
    return float(max(values)) if values else np.nan


def ess_bulk(x):
    x = np.asarray(x, dtype=float)
    return _ess(_rank_normalize(_split_chains(x)))


def diagnostics(draws, names=None):
    """R-hat and bulk ESS per parameter.

    Parameters whose draws are one constant value across all chains are
    marked ``degenerate``; they get R-hat 1 (the chains agree exactly) and
    ESS equal to the number of draws instead of NaN.
    """
    if draws.n_chains < 2 or draws.n_draws < 4:
        raise ValueError("diagnostics need at least 2 chains with 4 draws each")
    names = draws.columns if names is None else list(names)
    rows = []
    for name in names:
        x = draws.get(name)
        degenerate = bool(np.ptp(x) == 0)
        if degenerate:
            rows.append((name, 1.0, float(x.size), True))
        else:
            rows.append((name, rhat(x), ess_bulk(x), False))
    return pd.DataFrame(rows, columns=["parameter", "rhat", "ess_bulk", "degenerate"])
