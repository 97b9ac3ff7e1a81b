"""Joint posterior over the latent grid, data-model and process parameters.

All free parameters live in one flat unconstrained vector: scales on the log
scale, ``rho_pma`` on the logit scale, latent values and levels untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datamodel import (
    SOURCE_ERROR_TYPES,
    DataModelParams,
    DataModelPriors,
    ErrorStructure,
    _ar_terms,
    _total_variance,
    data_log_density,
    datamodel_log_prior,
)
from ..domain import inv_logit
from ..process import ProcessParams, get_process_model
from . import _kernel

# (name, transform) in layout order; sizes come from the structure.
_SEGMENTS = (
    ("eta", "identity"),
    ("level", "identity"),
    ("smoothing_sd", "log"),
    ("smoothing_sd_scale", "log"),
    ("source_scale", "log"),
    ("char_scale", "log"),
    ("tau", "log"),
    ("slab", "log"),
    ("local_scale", "log"),
    ("rho_pma", "logit"),
)


@dataclass
class Layout:
    """Maps named parameters to slices of the unconstrained vector."""

    slices: dict
    transforms: dict
    size: int

    def __getitem__(self, name):
        return self.slices[name]


class UnconstrainedVector(np.ndarray):
    """Flat float array that remembers its :class:`Layout`."""

    def __new__(cls, values, layout):
        obj = np.asarray(values, dtype=float).view(cls)
        obj.layout = layout
        return obj

    def __array_finalize__(self, obj):
        self.layout = getattr(obj, "layout", None)

    def segment(self, name):
        return np.asarray(self)[self.layout[name]]


def _half_normal(x, sd):
    return np.log(2.0) - np.log(sd) - 0.5 * np.log(2.0 * np.pi) - 0.5 * (x / sd) ** 2


def _half_cauchy(x, scale):
    return np.log(2.0 / (np.pi * scale)) - np.log1p((x / scale) ** 2)


class NOSPosterior:
    """Log posterior and gradient of one indicator's model on a fixed grid.

    Parameters
    ----------
    structure : ErrorStructure
        Observations, index sets and PMA blocks.
    priors : DataModelPriors, optional
    process : str
        Name of a registered process model.
    """

    def __init__(self, structure: ErrorStructure, priors=None, process="rw2"):
        self.structure = structure
        self.priors = priors or DataModelPriors()
        self.process_name = process
        self.process = get_process_model(process)
        self.n_pop = len(structure.populations)
        self.n_year = len(structure.years)
        sizes = {
            "eta": self.n_pop * self.n_year,
            "level": self.n_pop,
            "smoothing_sd": self.n_pop,
            "smoothing_sd_scale": 1,
            "source_scale": len(SOURCE_ERROR_TYPES),
            "char_scale": 1,
            "tau": 1,
            "slab": 1,
            "local_scale": len(structure.outlier_ids),
            "rho_pma": 1,
        }
        slices, start = {}, 0
        for name, _ in _SEGMENTS:
            slices[name] = slice(start, start + sizes[name])
            start += sizes[name]
        self.layout = Layout(slices, dict(_SEGMENTS), start)
        self._cell = structure.cell
        self._has_src = structure.source >= 0
        self._src_rows = structure.source[self._has_src]
        self._is_out = structure.outlier >= 0
        self._out_rows = structure.outlier[self._is_out]
        offsets = np.array([slices[name].start for name, _ in _SEGMENTS] + [start], dtype=np.int64)
        pri = self.priors
        self._kernel_args = (
            self.n_pop, self.n_year, offsets,
            np.ascontiguousarray(structure.z, dtype=float),
            np.ascontiguousarray(structure.s2, dtype=float),
            np.ascontiguousarray(self._cell, dtype=np.int64),
            np.ascontiguousarray(structure.source, dtype=np.int64),
            np.ascontiguousarray(structure.in_char, dtype=np.bool_),
            np.ascontiguousarray(structure.outlier, dtype=np.int64),
            np.ascontiguousarray(structure.prev, dtype=np.int64),
            np.ascontiguousarray(structure.gap, dtype=np.int64),
            float(pri.source_sd), float(pri.char_sd), float(pri.tau_scale),
            float(pri.slab_sd), float(pri.local_scale), True,
        )

    @property
    def n_dim(self):
        return self.layout.size

    # -- transforms ---------------------------------------------------------

    def constrain(self, v):
        """Unconstrained vector -> (eta grid, DataModelParams, ProcessParams)."""
        v = np.asarray(v, dtype=float)
        L = self.layout
        eta = v[L["eta"]].reshape(self.n_pop, self.n_year)
        src = np.exp(v[L["source_scale"]])
        gamma = np.exp(v[L["local_scale"]])
        dm = DataModelParams(
            source_scale=dict(zip(SOURCE_ERROR_TYPES, src)),
            char_scale=float(np.exp(v[L["char_scale"]][0])),
            tau=float(np.exp(v[L["tau"]][0])),
            slab=float(np.exp(v[L["slab"]][0])),
            local_scale=dict(zip(self.structure.outlier_ids.tolist(), gamma)),
            rho_pma=float(inv_logit(v[L["rho_pma"]][0])),
        )
        pp = ProcessParams(
            level=v[L["level"]].copy(),
            smoothing_sd=np.exp(v[L["smoothing_sd"]]),
            smoothing_sd_scale=float(np.exp(v[L["smoothing_sd_scale"]][0])),
        )
        return eta.copy(), dm, pp

    def unconstrain(self, eta, dm: DataModelParams, pp: ProcessParams):
        """Constrained parameters -> (UnconstrainedVector, log |Jacobian|).

        The Jacobian term is that of the inverse (constraining) map, i.e. the
        correction added to the target density.
        """
        L = self.layout
        v = np.empty(L.size)
        v[L["eta"]] = np.asarray(getattr(eta, "eta", eta), dtype=float).ravel()
        v[L["level"]] = pp.level
        v[L["smoothing_sd"]] = np.log(pp.smoothing_sd)
        v[L["smoothing_sd_scale"]] = np.log(pp.smoothing_sd_scale)
        v[L["source_scale"]] = np.log([dm.source_scale[k] for k in SOURCE_ERROR_TYPES])
        v[L["char_scale"]] = np.log(dm.char_scale)
        v[L["tau"]] = np.log(dm.tau)
        v[L["slab"]] = np.log(dm.slab)
        v[L["local_scale"]] = np.log([dm.local_scale[i] for i in self.structure.outlier_ids.tolist()])
        rho = dm.rho_pma
        v[L["rho_pma"]] = np.log(rho) - np.log1p(-rho)
        return UnconstrainedVector(v, L), self.log_jacobian(v)

    def log_jacobian(self, v):
        v = np.asarray(v, dtype=float)
        L = self.layout
        out = 0.0
        for name, kind in _SEGMENTS:
            if kind == "log":
                out += np.sum(v[L[name]])
            elif kind == "logit":
                u = v[L[name]]
                # log(sigmoid(u) * (1 - sigmoid(u)))
                out += np.sum(-np.logaddexp(0.0, -u) - np.logaddexp(0.0, u))
        return float(out)

    # -- density ------------------------------------------------------------

    def log_posterior(self, v):
        return self.logp_and_grad(v)[0]

    def gradient(self, v):
        return self.logp_and_grad(v)[1]

    def log_posterior_by_parts(self, v):
        """Data, data-model prior, process prior and Jacobian terms, evaluated
        through the public component functions."""
        eta, dm, pp = self.constrain(v)
        return {
            "data": data_log_density(None, eta, self.structure, dm),
            "datamodel_prior": datamodel_log_prior(dm, self.priors),
            "process_prior": self.process.log_prior(eta, pp),
            "jacobian": self.log_jacobian(v),
        }

    def logp_and_grad(self, v):
        """Log posterior and its exact gradient at an unconstrained point.

        Evaluated by the compiled kernel; returns ``(-inf, zeros)`` where the
        transformed point leaves the support numerically.
        """
        v = np.ascontiguousarray(v, dtype=float)
        if np.isnan(v).any():
            raise ValueError(f"NaN in unconstrained vector at coordinates {np.flatnonzero(np.isnan(v)).tolist()}")
        if self.process_name != "rw2":
            return self.logp_and_grad_numpy(v)
        grad = np.empty(v.size)
        lp = _kernel.logp_grad(v, grad, *self._kernel_args)
        if not np.isfinite(lp):
            return -np.inf, np.zeros(v.size)
        if np.isnan(grad).any():
            raise FloatingPointError(f"NaN gradient at coordinates {np.flatnonzero(np.isnan(grad)).tolist()}")
        return float(lp), grad

    def jit_target(self):
        """``(f, args)`` for the compiled sampler, or None for other process models."""
        if self.process_name != "rw2":
            return None
        return _kernel.posterior_target, self._kernel_args

    def logp_and_grad_numpy(self, v):
        """Same as :meth:`logp_and_grad`, written with vectorized numpy."""
        v = np.asarray(v, dtype=float)
        if np.isnan(v).any():
            raise ValueError(f"NaN in unconstrained vector at coordinates {np.flatnonzero(np.isnan(v)).tolist()}")
        L = self.layout
        st = self.structure
        pri = self.priors
        grad = np.zeros(L.size)

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            eta = v[L["eta"]]
            level = v[L["level"]]
            log_lam = v[L["smoothing_sd"]]
            lam = np.exp(log_lam)
            log_scale = v[L["smoothing_sd_scale"]][0]
            scale = np.exp(log_scale)
            log_src = v[L["source_scale"]]
            src = np.exp(log_src)
            log_char = v[L["char_scale"]][0]
            char = np.exp(log_char)
            log_tau = v[L["tau"]][0]
            tau = np.exp(log_tau)
            log_slab = v[L["slab"]][0]
            slab = np.exp(log_slab)
            log_gamma = v[L["local_scale"]]
            gamma = np.exp(log_gamma)
            u_rho = v[L["rho_pma"]][0]
            rho = float(inv_logit(u_rho))

            scales = np.concatenate([lam, [scale], src, [char, tau, slab], gamma])
            if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
                return -np.inf, grad

            # process prior
            proc = self.process.log_prior_and_grad(
                eta.reshape(self.n_pop, self.n_year), ProcessParams(level, lam, scale)
            )
            lp_proc, d_eta_p, d_level, d_lam, d_scale = proc
            grad[L["eta"]] += d_eta_p.ravel()
            grad[L["level"]] += d_level
            grad[L["smoothing_sd"]] += d_lam * lam
            grad[L["smoothing_sd_scale"]] += d_scale * scale

            # data density
            var = _total_variance(st, src, char, tau, slab, gamma)
            sd = np.sqrt(var)
            resid = st.z - eta[self._cell]
            try:
                lp_data, d_resid, d_sd, d_rho = _ar_terms(resid, sd, st.prev, st.gap, rho)
            except FloatingPointError:
                return -np.inf, grad
            np.subtract.at(grad, L["eta"].start + self._cell, d_resid)
            d_var = d_sd / (2.0 * sd)
            d_src = np.bincount(self._src_rows, weights=d_var[self._has_src], minlength=len(src))
            grad[L["source_scale"]] += d_src * 2.0 * src**2
            grad[L["char_scale"]] += np.sum(d_var[st.in_char]) * 2.0 * char**2
            if self._is_out.any():
                u = tau * gamma[self._out_rows]
                # k = u^2 / (slab^2 + u^2), so the outlier variance is slab^2 * k
                k = 1.0 / (1.0 + (slab / u) ** 2)
                dv = d_var[self._is_out]
                # d/dlog(gamma) = d/dlog(tau) = 2 slab^2 k (1 - k) per observation
                per_obs = dv * 2.0 * slab**2 * k / (1.0 + (u / slab) ** 2)
                grad[L["local_scale"]][self._out_rows] += per_obs
                grad[L["tau"]] += np.sum(per_obs)
                grad[L["slab"]] += np.sum(dv * k * k) * 2.0 * slab**2
            grad[L["rho_pma"]] += d_rho * rho * (1.0 - rho)

            # data-model prior
            lp_prior = np.sum(_half_normal(src, pri.source_sd))
            grad[L["source_scale"]] += -(src**2) / pri.source_sd**2
            lp_prior += _half_normal(char, pri.char_sd)
            grad[L["char_scale"]] += -(char**2) / pri.char_sd**2
            lp_prior += _half_cauchy(tau, pri.tau_scale)
            grad[L["tau"]] += -2.0 * tau**2 / (pri.tau_scale**2 + tau**2)
            lp_prior += _half_normal(slab, pri.slab_sd)
            grad[L["slab"]] += -(slab**2) / pri.slab_sd**2
            lp_prior += np.sum(_half_cauchy(gamma, pri.local_scale))
            grad[L["local_scale"]] += -2.0 * gamma**2 / (pri.local_scale**2 + gamma**2)

            # Jacobian of the constraining transforms
            log_jac = np.sum(log_lam) + log_scale + np.sum(log_src) + log_char + log_tau + log_slab
            log_jac += np.sum(log_gamma)
            log_jac += -np.logaddexp(0.0, -u_rho) - np.logaddexp(0.0, u_rho)
            for name in ("smoothing_sd", "smoothing_sd_scale", "source_scale", "char_scale", "tau", "slab", "local_scale"):
                grad[L[name]] += 1.0
            grad[L["rho_pma"]] += 1.0 - 2.0 * rho

        lp = lp_proc + lp_data + lp_prior + log_jac
        if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
            bad = np.flatnonzero(~np.isfinite(grad))
            if np.isnan(grad).any() and np.isfinite(lp):
                raise FloatingPointError(f"NaN gradient at coordinates {bad.tolist()}")
            return -np.inf, np.zeros(L.size)
        return float(lp), grad

    # -- helpers for the sampler and reporting -------------------------------

    def column_names(self):
        """Names of the constrained scalar columns written for each draw."""
        st = self.structure
        names = [f"eta[{p},{y}]" for p in st.populations for y in st.years]
        names += [f"level[{p}]" for p in st.populations]
        names += [f"smoothing_sd[{p}]" for p in st.populations]
        names += ["smoothing_sd_scale"]
        names += [f"source_scale[{k}]" for k in SOURCE_ERROR_TYPES]
        names += ["char_scale", "tau", "slab"]
        names += [f"local_scale[{i}]" for i in st.outlier_ids.tolist()]
        names += ["rho_pma"]
        return names

    def to_columns(self, v):
        """Constrained values in :meth:`column_names` order."""
        v = np.asarray(v, dtype=float)
        out = v.copy()
        for name, kind in _SEGMENTS:
            sl = self.layout[name]
            if kind == "log":
                out[sl] = np.exp(v[sl])
            elif kind == "logit":
                out[sl] = inv_logit(v[sl])
        return out

    def initial_point(self, rng):
        """Random starting point near the data.

        Latent values start at each population's mean transformed observation
        (or the global mean) plus jitter; scales start near their prior
        medians.
        """
        st = self.structure
        L = self.layout
        v = np.zeros(L.size)
        overall = float(np.mean(st.z)) if st.n_obs else 0.0
        sums = np.bincount(st.pop_index, weights=st.z, minlength=self.n_pop)
        counts = np.bincount(st.pop_index, minlength=self.n_pop)
        centre = np.where(counts > 0, sums / np.maximum(counts, 1), overall)
        eta = centre[:, None] + rng.uniform(-0.2, 0.2, size=(self.n_pop, self.n_year))
        v[L["eta"]] = eta.ravel()
        v[L["level"]] = eta[:, 0] + rng.uniform(-0.5, 0.5, size=self.n_pop)
        v[L["smoothing_sd"]] = np.log(0.1) + rng.uniform(-1, 1, size=self.n_pop)
        v[L["smoothing_sd_scale"]] = np.log(0.3) + rng.uniform(-1, 1)
        v[L["source_scale"]] = np.log(0.1) + rng.uniform(-1, 1, size=len(SOURCE_ERROR_TYPES))
        v[L["char_scale"]] = np.log(0.1) + rng.uniform(-1, 1)
        v[L["tau"]] = np.log(self.priors.tau_scale) + rng.uniform(-1, 1)
        v[L["slab"]] = np.log(0.5) + rng.uniform(-1, 1)
        v[L["local_scale"]] = rng.uniform(-1, 1, size=len(st.outlier_ids))
        v[L["rho_pma"]] = rng.uniform(-1, 1)
        return v

    def draw_metadata(self):
        st = self.structure
        return {
            "populations": list(st.populations),
            "years": [int(y) for y in st.years],
            "outlier_ids": st.outlier_ids.tolist(),
            "process": self.process_name,
            "priors": {
                "source_sd": self.priors.source_sd,
                "char_sd": self.priors.char_sd,
                "tau_scale": self.priors.tau_scale,
                "slab_sd": self.priors.slab_sd,
                "local_scale": self.priors.local_scale,
            },
        }

    def sampler_view(self):
        """Coordinates the sampler moves in; see :class:`NonCentredView`."""
        if self.process_name == "rw2":
            return NonCentredView(self)
        return self


class NonCentredView:
    """The posterior in non-centred coordinates for the second-order walk.

    Small smoothing sds pin the second differences of the latent series and
    form a funnel that forces tiny leapfrog steps. The sampler therefore
    moves in coordinates where years three onwards hold the standardized
    innovations ``(eta_t - 2 eta_{t-1} + eta_{t-2}) / lambda_c``. Levels are
    only tied to the first latent value by the diffuse normal term, so they
    are replaced by ``(level_c - eta_c1) / 10``, which is exactly standard
    normal and keeps warmup from mis-learning their scale. Draws are
    mapped back, so stored columns match :meth:`NOSPosterior.column_names`.
    """

    def __init__(self, posterior):
        self.posterior = posterior
        L = posterior.layout
        self._dims = (posterior.n_pop, posterior.n_year, L["eta"].start, L["level"].start, L["smoothing_sd"].start)
        self._args = (np.empty(posterior.n_dim),) + self._dims + (posterior._kernel_args[:-1] + (False,),)

    @property
    def n_dim(self):
        return self.posterior.n_dim

    def to_layout(self, w):
        w = np.ascontiguousarray(w, dtype=float)
        v = np.empty_like(w)
        _kernel.noncentred_to_centred(w, v, *self._dims)
        return v

    def from_layout(self, v):
        v = np.ascontiguousarray(v, dtype=float)
        w = np.empty_like(v)
        _kernel.centred_to_noncentred(v, w, *self._dims)
        return w

    def jit_target(self):
        return _kernel.view_target, self._args

    def logp_and_grad(self, w):
        w = np.ascontiguousarray(w, dtype=float)
        if np.isnan(w).any():
            raise ValueError(f"NaN in sampler coordinates {np.flatnonzero(np.isnan(w)).tolist()}")
        grad = np.empty(w.size)
        lp = _kernel.view_target(w, grad, self._args)
        return float(lp), grad

    def initial_point(self, rng):
        return self.from_layout(self.posterior.initial_point(rng))

    def to_columns(self, w):
        return self.posterior.to_columns(self.to_layout(w))

    def column_names(self):
        return self.posterior.column_names()

    def draw_metadata(self):
        return self.posterior.draw_metadata()
