"""Multi-chain sampling with deterministic per-chain random streams."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .draws import PosteriorDraws
from .nuts import run_chain

logger = logging.getLogger(__name__)

MAX_DIVERGENCE_RATE = 0.10


def _chain_job(args):
    model, seed_seq, warmup, draws, target_accept, max_depth, init = args
    rng = np.random.default_rng(seed_seq)
    q0 = model.initial_point(rng) if init is None else np.asarray(init, dtype=float)
    jit = getattr(model, "jit_target", None)
    return run_chain(
        model.logp_and_grad, q0, warmup, draws, rng, model.to_columns,
        target_accept=target_accept, max_depth=max_depth,
        jit_target=jit() if jit is not None else None,
    )


def sample(model, chains=4, warmup=500, draws=500, seed=0, target_accept=0.9, max_depth=10, n_jobs=1, init=None):
    """Run ``chains`` independent NUTS chains on ``model``.

    ``model`` provides ``logp_and_grad``, ``initial_point(rng)``,
    ``to_columns(q)`` and ``column_names()``; if it has ``sampler_view()``
    the chains run in those coordinates instead. ``init`` is given in the
    model's own layout. Chain ``k`` draws all its
    randomness from the ``k``-th child of ``SeedSequence(seed)``, so results
    do not depend on ``n_jobs``. A post-warmup divergence rate above 10 % is
    recorded in ``metadata["quality_failures"]``.
    """
    if chains < 1 or draws < 1 or warmup < 0:
        raise ValueError("need chains >= 1, draws >= 1 and warmup >= 0")
    if hasattr(model, "sampler_view"):
        model = model.sampler_view()
    if init is not None and hasattr(model, "from_layout"):
        init = model.from_layout(init)
    children = np.random.SeedSequence(seed).spawn(chains)
    jobs = [(model, s, warmup, draws, target_accept, max_depth, init) for s in children]
    if n_jobs == 1 or chains == 1:
        results = [_chain_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_chain_job, jobs))

    values = np.stack([r[0] for r in results])
    logp = np.stack([r[1] for r in results])
    stat_keys = [k for k in results[0][2] if k != "inv_metric"]
    stats = {k: np.stack([r[2][k] for r in results]) for k in stat_keys}
    divergence_rate = float(stats["divergent"].mean())
    failures = []
    if divergence_rate > MAX_DIVERGENCE_RATE:
        failures.append(f"divergence rate {divergence_rate:.3f} exceeds {MAX_DIVERGENCE_RATE}")
        logger.warning("sampling quality failure: %s", failures[-1])
    metadata = {
        "seed": seed,
        "chains": chains,
        "warmup": warmup,
        "target_accept": target_accept,
        "max_depth": max_depth,
        "divergence_rate": divergence_rate,
        "quality_failures": failures,
        "step_size": [float(r[2]["step_size"][0]) for r in results],
    }
    metadata.update(getattr(model, "draw_metadata", lambda: {})())
    return PosteriorDraws(model.column_names(), values, logp, stats, metadata)
