"""Latent process models for the logit-scale indicator grid.

The default ``rw2`` model is a second-order random walk per population with
a hierarchical prior on the per-population smoothing sd. Models are looked up
by name so another process model can be registered without touching the
data model or the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
DIFFUSE_SD = 10.0


@dataclass
class ProcessParams:
    level: np.ndarray
    smoothing_sd: np.ndarray
    smoothing_sd_scale: float

    def __post_init__(self):
        self.level = np.atleast_1d(np.asarray(self.level, dtype=float))
        self.smoothing_sd = np.atleast_1d(np.asarray(self.smoothing_sd, dtype=float))
        if np.any(self.smoothing_sd <= 0) or self.smoothing_sd_scale <= 0:
            raise ValueError("smoothing sds must be positive")


def _normal(x, sd):
    return -0.5 * LOG_2PI - np.log(sd) - 0.5 * (x / sd) ** 2


def _half_normal(x, sd):
    return np.log(2.0) - np.log(sd) - 0.5 * LOG_2PI - 0.5 * (x / sd) ** 2


class RandomWalk2:
    """Second-order random walk with diffuse start and hierarchical smoothing.

    Per population: ``eta[0] ~ N(level, 10^2)``, ``eta[1] - eta[0] ~ N(0, 10^2)``,
    second differences ``~ N(0, smoothing_sd^2)``. ``smoothing_sd`` is
    half-normal with sd ``smoothing_sd_scale``, which is itself half-normal(1).
    """

    name = "rw2"

    def log_prior(self, eta, params: ProcessParams):
        return self.log_prior_and_grad(eta, params)[0]

    def log_prior_and_grad(self, eta, params: ProcessParams):
        """Log prior with partials w.r.t. eta, level, smoothing_sd and its scale."""
        eta = np.asarray(getattr(eta, "eta", eta), dtype=float)
        n_pop, n_year = eta.shape
        level, lam, scale = params.level, params.smoothing_sd, params.smoothing_sd_scale
        if level.shape != (n_pop,) or lam.shape != (n_pop,):
            raise ValueError("process parameters do not match the grid's population count")

        d_eta = np.zeros_like(eta)
        d_level = np.zeros(n_pop)
        d_lam = np.zeros(n_pop)

        r0 = eta[:, 0] - level
        lp = np.sum(_normal(r0, DIFFUSE_SD))
        d_eta[:, 0] -= r0 / DIFFUSE_SD**2
        d_level += r0 / DIFFUSE_SD**2
        if n_year >= 2:
            d1 = eta[:, 1] - eta[:, 0]
            lp += np.sum(_normal(d1, DIFFUSE_SD))
            g = -d1 / DIFFUSE_SD**2
            d_eta[:, 1] += g
            d_eta[:, 0] -= g
        if n_year >= 3:
            d2 = eta[:, 2:] - 2.0 * eta[:, 1:-1] + eta[:, :-2]
            lp += np.sum(-0.5 * LOG_2PI - np.log(lam)[:, None] - 0.5 * (d2 / lam[:, None]) ** 2)
            g = -d2 / lam[:, None] ** 2
            d_eta[:, 2:] += g
            d_eta[:, 1:-1] -= 2.0 * g
            d_eta[:, :-2] += g
            d_lam += np.sum(-1.0 / lam[:, None] + d2**2 / lam[:, None] ** 3, axis=1)

        lp += np.sum(_half_normal(lam, scale))
        d_lam -= lam / scale**2
        d_scale = np.sum(-1.0 / scale + lam**2 / scale**3)
        lp += _half_normal(scale, 1.0)
        d_scale -= scale
        return float(lp), d_eta, d_level, d_lam, float(d_scale)


PROCESS_MODELS = {RandomWalk2.name: RandomWalk2}


def register_process_model(cls):
    """Make a process model class selectable by its ``name`` attribute."""
    PROCESS_MODELS[cls.name] = cls
    return cls


def get_process_model(name="rw2"):
    try:
        return PROCESS_MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown process model {name!r}; known: {sorted(PROCESS_MODELS)}") from None


def process_log_prior(eta, params: ProcessParams, model="rw2"):
    """Log prior of the latent grid under the named process model."""
    return get_process_model(model).log_prior(eta, params)
