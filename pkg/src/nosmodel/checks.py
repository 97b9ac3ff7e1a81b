"""Self-check suite: the model code against independent oracles.

Each check returns a :class:`CheckResult` with the largest error it
measured, so a report shows how much headroom each tolerance has.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .datamodel import (
    SOURCE_ERROR_TYPES,
    DataModelParams,
    build_error_structure,
    data_log_density,
    horseshoe_scale,
)
from .domain import SOURCE_TYPES, check_observations, inv_logit, logit
from .inference.model import NOSPosterior
from .sim import SimDesign, dense_data_log_density, finite_difference_gradient, simulate_dataset


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"[{status}] {self.name}: max error {self.max_error:.3e} (tolerance {self.tolerance:.1e})"
        return text + (f"; {self.detail}" if self.detail else "")


def random_instance(rng, max_obs=30):
    """A small random data set, structure, latent grid and parameter set.

    Mixes all source types, characteristic mismatches, outlier flags and
    PMA series of varying length with gaps between years.
    """
    n_pop = int(rng.integers(1, 4))
    years = np.arange(2000, 2012)
    rows = []
    for c in range(n_pop):
        # a PMA panel with irregular years, sometimes two series
        for s in range(int(rng.integers(0, 3))):
            k = int(rng.integers(1, 6))
            for y in np.sort(rng.choice(years, size=k, replace=False)):
                rows.append((f"C{c}", int(y), "PMA", f"S{s}"))
        for _ in range(int(rng.integers(1, 8))):
            src = str(rng.choice([t for t in SOURCE_TYPES if t != "PMA"]))
            rows.append((f"C{c}", int(rng.choice(years)), src, ""))
    rows = rows[:max_obs]
    n = len(rows)
    frame = pd.DataFrame(rows, columns=["population", "year", "source_type", "pma_series_id"])
    frame["id"] = np.arange(1, n + 1)
    frame["indicator"] = "primary_proportion"
    frame["value"] = rng.uniform(0.05, 0.95, size=n)
    frame["se_proportion"] = rng.uniform(0.005, 0.05, size=n)
    frame["n_eff"] = np.nan
    frame["char_mismatch"] = rng.random(n) < 0.3
    frame["documented_concern"] = False
    df = check_observations(frame)
    flags = rng.random(len(df)) < 0.5
    structure = build_error_structure(df, flags)
    eta = rng.normal(0.0, 1.0, size=(len(structure.populations), len(structure.years)))
    params = DataModelParams(
        source_scale={k: float(rng.uniform(0.01, 0.5)) for k in SOURCE_ERROR_TYPES},
        char_scale=float(rng.uniform(0.01, 0.5)),
        tau=float(rng.uniform(0.01, 0.5)),
        slab=float(rng.uniform(0.2, 2.0)),
        local_scale={int(i): float(abs(rng.standard_cauchy())) for i in structure.outlier_ids},
        rho_pma=float(rng.uniform(0.0, 0.95)),
    )
    return structure, eta, params


def check_likelihood_oracle(n_instances=200, seed=0, tolerance=1e-10):
    """Block-factorized data density against one dense multivariate normal."""
    rng = np.random.default_rng(seed)
    worst, where = 0.0, -1
    for k in range(n_instances):
        structure, eta, params = random_instance(rng)
        fast = data_log_density(None, eta, structure, params)
        dense = dense_data_log_density(structure, eta, params)
        err = abs(fast - dense) / max(abs(dense), 1e-300)
        if err > worst:
            worst, where = err, k
    return CheckResult(
        "likelihood vs dense oracle", worst <= tolerance, worst, tolerance,
        f"{n_instances} instances, worst #{where}",
    )


def toy_posterior(seed=0, n_populations=3, n_years=8):
    """A 3-population posterior with every parameter block present."""
    design = SimDesign(
        n_populations=n_populations,
        n_years=n_years,
        obs_per_source={"DHS": 2, "MICS": 2, "PMA": 3, "National": 2, "Other": 1},
        char_fraction=0.3,
        seed=seed,
    )
    sim = simulate_dataset(design)
    df = check_observations(sim.observations)
    flags = df["source_type"].to_numpy() != "DHS"
    return NOSPosterior(build_error_structure(df, flags))


def _random_point(model, rng):
    v = model.initial_point(rng)
    return v + rng.normal(0.0, 0.3, size=v.size)


def check_gradient(n_points=20, seed=0, rtol=1e-5, atol=1e-7, step=1e-5, perturb=None):
    """Analytic gradient against central differences of the log posterior.

    A coordinate passes when ``|g - fd| <= max(rtol * |fd|, atol)``; the
    reported error is the largest ``|g - fd| / max(|fd|, atol / rtol)``.
    ``perturb=(index, amount)`` adds a deliberate error to one gradient
    coordinate so the failure path can be exercised.
    """
    model = toy_posterior(seed)
    rng = np.random.default_rng(seed + 1)
    worst, failures = 0.0, []
    names = model.column_names()
    for _ in range(n_points):
        v = _random_point(model, rng)
        _, g = model.logp_and_grad(v)
        if perturb is not None:
            g = g.copy()
            g[perturb[0]] += perturb[1]
        fd = finite_difference_gradient(model.log_posterior, v, step)
        diff = np.abs(g - fd)
        rel = diff / np.maximum(np.abs(fd), atol / rtol)
        worst = max(worst, float(rel.max()))
        bad = np.flatnonzero(diff > np.maximum(rtol * np.abs(fd), atol))
        failures.extend(int(j) for j in bad)
    detail = f"{n_points} points, {model.n_dim} coordinates"
    if failures:
        coords = sorted(set(failures))
        detail += "; failing coordinates " + ", ".join(f"{j} ({names[j]})" for j in coords[:10])
    return CheckResult("gradient vs finite differences", not failures, worst, rtol, detail)


def check_sampler_gradient(n_points=5, seed=0, rtol=1e-5, atol=1e-7, step=1e-5):
    """Same comparison in the coordinates the sampler moves in."""
    model = toy_posterior(seed)
    view = model.sampler_view()
    rng = np.random.default_rng(seed + 2)
    worst, failures = 0.0, 0
    for _ in range(n_points):
        w = view.from_layout(_random_point(model, rng))
        _, g = view.logp_and_grad(w)
        fd = finite_difference_gradient(lambda x: view.logp_and_grad(x)[0], w, step)
        diff = np.abs(g - fd)
        worst = max(worst, float((diff / np.maximum(np.abs(fd), atol / rtol)).max()))
        failures += int((diff > np.maximum(rtol * np.abs(fd), atol)).sum())
    return CheckResult(
        "sampler-coordinate gradient vs finite differences", failures == 0, worst, rtol,
        f"{n_points} points",
    )


def check_compiled_kernel(n_points=20, seed=0, tolerance=1e-9):
    """Compiled log posterior against the vectorized numpy evaluation."""
    model = toy_posterior(seed)
    rng = np.random.default_rng(seed + 3)
    worst = 0.0
    for _ in range(n_points):
        v = _random_point(model, rng)
        lp_a, g_a = model.logp_and_grad(v)
        lp_b, g_b = model.logp_and_grad_numpy(v)
        scale = max(1.0, abs(lp_b), float(np.abs(g_b).max()))
        worst = max(worst, abs(lp_a - lp_b) / scale, float(np.abs(g_a - g_b).max()) / scale)
    return CheckResult("compiled kernel vs numpy", worst <= tolerance, worst, tolerance)


def check_horseshoe_limits():
    """Zero at gamma = 0, the slab in the wide limit, slab / sqrt(2) at tau * gamma = slab."""
    cases = [(0.04, 1.0), (0.5, 0.3), (2.0, 5.0)]
    zero = max(abs(float(horseshoe_scale(t, s, 0.0))) for t, s in cases)
    wide = max(
        abs(float(horseshoe_scale(t, s, r * s / t)) - s) / s for t, s in cases for r in (1e6, 1e9, 1e15)
    )
    mid = max(abs(float(horseshoe_scale(t, s, s / t)) - s / math.sqrt(2.0)) / s for t, s in cases)
    return [
        CheckResult("horseshoe at gamma = 0", zero == 0.0, zero, 0.0),
        CheckResult("horseshoe wide limit (relative)", wide <= 1e-6, wide, 1e-6),
        CheckResult("horseshoe midpoint (relative)", mid <= 1e-12, mid, 1e-12),
    ]


def check_transforms(seed=0, tolerance=1e-12):
    """logit/inv_logit and constrain/unconstrain round trips."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(1e-6, 1 - 1e-6, size=1000)
    worst = float(np.abs(inv_logit(logit(p)) - p).max())
    model = toy_posterior(seed)
    for _ in range(10):
        v = _random_point(model, rng)
        eta, dm, pp = model.constrain(v)
        back, _ = model.unconstrain(eta, dm, pp)
        worst = max(worst, float(np.abs(np.asarray(back) - v).max()))
        view = model.sampler_view()
        worst = max(worst, float(np.abs(view.to_layout(view.from_layout(v)) - v).max()))
    return CheckResult("transform round trips", worst <= tolerance, worst, tolerance)


def run_checks(perturb_gradient=None, quick=False):
    """All checks in order; ``quick`` uses fewer instances and points."""
    n_lik, n_grad = (40, 4) if quick else (200, 20)
    return [
        check_likelihood_oracle(n_lik),
        check_gradient(n_grad, perturb=perturb_gradient),
        check_sampler_gradient(2 if quick else 5),
        check_compiled_kernel(5 if quick else 20),
        *check_horseshoe_limits(),
        check_transforms(),
    ]


__all__ = [
    "CheckResult",
    "check_compiled_kernel",
    "check_gradient",
    "check_horseshoe_limits",
    "check_likelihood_oracle",
    "check_sampler_gradient",
    "check_transforms",
    "random_instance",
    "run_checks",
    "toy_posterior",
]
