"""No-U-turn Hamiltonian Monte Carlo with multinomial trajectory sampling.

The transition follows the multinomial variant: the trajectory is doubled
forwards or backwards at random, a candidate is drawn from each new subtree
in proportion to its weight, and doubling stops on a U-turn, a divergence or
the depth limit. Warmup adapts the step size by dual averaging and a diagonal
inverse metric over expanding windows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _nuts_jit

logger = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


class DualAveraging:
    """Step-size adaptation towards a target mean acceptance statistic."""

    def __init__(self, step_size, target=0.9, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return float(np.exp(x))

    @property
    def final_step_size(self):
        return float(np.exp(self.x_bar))


class WindowedAdaptation:
    """Warmup schedule: fast initial buffer, doubling slow windows, final buffer."""

    def __init__(self, n_warmup, init_buffer=75, term_buffer=50, base_window=25):
        if n_warmup < 20:
            self.init_buffer, self.term_buffer, self.base_window = n_warmup, 0, 0
        elif init_buffer + base_window + term_buffer > n_warmup:
            self.init_buffer = int(0.15 * n_warmup)
            self.term_buffer = int(0.1 * n_warmup)
            self.base_window = n_warmup - (self.init_buffer + self.term_buffer)
        else:
            self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        self.n_warmup = n_warmup
        self.window_ends = []
        if self.base_window > 0:
            end_slow = n_warmup - self.term_buffer
            start, size = self.init_buffer, self.base_window
            while start < end_slow:
                end = start + size
                # merge a short final window into the previous one
                if end + 2 * size >= end_slow:
                    end = end_slow
                self.window_ends.append(end)
                start, size = end, 2 * size

    def in_slow_window(self, i):
        return self.base_window > 0 and self.init_buffer <= i < self.n_warmup - self.term_buffer

    def window_closes(self, i):
        return (i + 1) in self.window_ends


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized_variance(self):
        var = self.m2 / max(self.n - 1, 1)
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


class NUTS:
    """One chain of the no-U-turn sampler with a diagonal metric.

    Parameters
    ----------
    logp_and_grad : callable
        ``q -> (log density, gradient)``.
    rng : numpy.random.Generator
    inv_metric : array, optional
        Diagonal inverse mass matrix; identity by default.
    max_depth : int
    jit_target : tuple, optional
        ``(f, args)`` with ``f`` a numba function ``f(q, grad, args) -> logp``
        computing the same density; transitions then run compiled. Both
        routes consume the same random numbers and give the same chain.
    """

    def __init__(self, logp_and_grad, dim, rng, inv_metric=None, step_size=0.1, max_depth=10, jit_target=None):
        self.logp_and_grad = logp_and_grad
        self.jit_target = jit_target
        self.dim = dim
        self.rng = rng
        self.inv_metric = np.ones(dim) if inv_metric is None else np.asarray(inv_metric, float)
        self.step_size = step_size
        self.max_depth = max_depth

    # -- Hamiltonian pieces ---------------------------------------------------

    def _kinetic(self, p):
        return 0.5 * np.dot(p, self.inv_metric * p)

    def _sample_momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def _leapfrog(self, pt, eps):
        p = pt.p + 0.5 * eps * pt.grad
        q = pt.q + eps * self.inv_metric * p
        logp, grad = self.logp_and_grad(q)
        if np.isfinite(logp):
            p = p + 0.5 * eps * grad
        return _Point(q, p, logp, grad)

    def _hamiltonian(self, pt):
        if not np.isfinite(pt.logp):
            return np.inf
        h = -pt.logp + self._kinetic(pt.p)
        return h if np.isfinite(h) else np.inf

    def _criterion(self, p_sharp_minus, p_sharp_plus, rho):
        return np.dot(p_sharp_plus, rho) > 0 and np.dot(p_sharp_minus, rho) > 0

    # -- trajectory -------------------------------------------------------------

    def _draw_randoms(self):
        """Momentum and every uniform one transition can use, drawn up front."""
        p0 = self._sample_momentum()
        u_dir = self.rng.random(self.max_depth)
        u_sel = self.rng.random(self.max_depth)
        # a tree of depth d merges fewer than 2**d subtrees in total
        u_tree = self.rng.random(2**self.max_depth)
        return p0, u_dir, u_sel, u_tree

    def _build_tree(self, depth, edge, direction, h0, acc):
        """Extend the trajectory from ``edge`` by ``2**depth`` leapfrog steps.

        Returns ``(valid, edge, sample, log_weight, rho, p_beg, p_end)``
        where ``p_beg``/``p_end`` are the momenta at the two ends of the new
        subtree in integration order.
        """
        if depth == 0:
            new = self._leapfrog(edge, direction * self.step_size)
            h = self._hamiltonian(new)
            acc["n_leapfrog"] += 1
            if h - h0 > MAX_DELTA_H:
                acc["divergent"] = True
            log_w = h0 - h
            acc["sum_metro"] += 1.0 if log_w > 0 else math.exp(log_w)
            if acc["divergent"]:
                return False, new, new, -np.inf, new.p, new.p, new.p
            return True, new, new, log_w, new.p.copy(), new.p, new.p

        ok, edge, sample, lw_init, rho_init, p_beg, p_init_end = self._build_tree(
            depth - 1, edge, direction, h0, acc
        )
        if not ok:
            return False, edge, sample, -np.inf, rho_init, p_beg, p_init_end
        ok, edge, sample_final, lw_final, rho_final, p_final_beg, p_end = self._build_tree(
            depth - 1, edge, direction, h0, acc
        )
        if not ok:
            return False, edge, sample, -np.inf, rho_init, p_beg, p_end

        lw = _nuts_jit.log_add_exp(lw_init, lw_final)
        u = self._u_tree[acc["merges"]]
        acc["merges"] += 1
        if u < math.exp(lw_final - lw):
            sample = sample_final
        rho = rho_init + rho_final
        m = self.inv_metric
        persist = self._criterion(m * p_beg, m * p_end, rho)
        persist &= self._criterion(m * p_beg, m * p_final_beg, rho_init + p_final_beg)
        persist &= self._criterion(m * p_init_end, m * p_end, rho_final + p_init_end)
        return bool(persist), edge, sample, lw, rho, p_beg, p_end

    def transition(self, q, logp, grad):
        """One NUTS transition from ``q``; returns the new point and stats."""
        p0, u_dir, u_sel, self._u_tree = self._draw_randoms()
        if self.jit_target is not None:
            f, args = self.jit_target
            q, logp, grad, st = _nuts_jit.transition(
                f, args, np.ascontiguousarray(q, dtype=float), float(logp),
                np.ascontiguousarray(grad, dtype=float), p0, float(self.step_size),
                self.inv_metric, self.max_depth, u_dir, u_sel, self._u_tree,
            )
            stats = {
                "accept_stat": st[0],
                "n_leapfrog": int(st[1]),
                "tree_depth": int(st[2]),
                "divergent": bool(st[3]),
                "step_size": self.step_size,
                "energy": st[4],
            }
            return q, logp, grad, stats
        start = _Point(q, p0, logp, grad)
        h0 = self._hamiltonian(start)
        fwd = bck = start
        sample = start
        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = p0
        rho = p0.copy()
        log_sum_w = 0.0
        acc = {"n_leapfrog": 0, "sum_metro": 0.0, "divergent": False, "merges": 0}
        m = self.inv_metric
        depth = 0
        while depth < self.max_depth:
            if u_dir[depth] > 0.5:
                rho_bck = rho
                p_bck_fwd = p_fwd_bck
                ok, fwd, cand, lw_sub, rho_fwd, p_fwd_bck, p_fwd_fwd = self._build_tree(
                    depth, fwd, 1, h0, acc
                )
            else:
                rho_fwd = rho
                p_fwd_bck = p_bck_fwd
                ok, bck, cand, lw_sub, rho_bck, p_bck_fwd, p_bck_bck = self._build_tree(
                    depth, bck, -1, h0, acc
                )
            if not ok:
                break
            depth += 1
            if lw_sub > log_sum_w or u_sel[depth - 1] < math.exp(lw_sub - log_sum_w):
                sample = cand
            log_sum_w = _nuts_jit.log_add_exp(log_sum_w, lw_sub)
            rho = rho_bck + rho_fwd
            persist = self._criterion(m * p_bck_bck, m * p_fwd_fwd, rho)
            persist &= self._criterion(m * p_bck_bck, m * p_fwd_bck, rho_bck + p_fwd_bck)
            persist &= self._criterion(m * p_bck_fwd, m * p_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        stats = {
            "accept_stat": acc["sum_metro"] / max(acc["n_leapfrog"], 1),
            "n_leapfrog": acc["n_leapfrog"],
            "tree_depth": depth,
            "divergent": acc["divergent"],
            "step_size": self.step_size,
            "energy": self._hamiltonian(sample),
        }
        return sample.q, sample.logp, sample.grad, stats

    def find_reasonable_step_size(self, q, logp, grad):
        """Double or halve the step until one leapfrog's acceptance crosses 0.8."""
        eps = self.step_size
        p = self._sample_momentum()
        start = _Point(q, p, logp, grad)
        h0 = self._hamiltonian(start)
        new = self._leapfrog(start, eps)
        delta = h0 - self._hamiltonian(new)
        direction = 1 if delta > np.log(0.8) else -1
        for _ in range(100):
            p = self._sample_momentum()
            start = _Point(q, p, logp, grad)
            h0 = self._hamiltonian(start)
            new = self._leapfrog(start, eps)
            delta = h0 - self._hamiltonian(new)
            if direction == 1 and not delta > np.log(0.8):
                break
            if direction == -1 and not delta < np.log(0.8):
                break
            eps = eps * 2.0 if direction == 1 else eps / 2.0
            if eps > 1e7 or eps < 1e-12:
                break
        self.step_size = eps
        return eps


STAT_NAMES = ("accept_stat", "n_leapfrog", "tree_depth", "divergent", "step_size", "energy")


def run_chain(logp_and_grad, q0, n_warmup, n_draws, rng, to_columns, target_accept=0.9, max_depth=10, jit_target=None):
    """Adapt and sample one chain.

    Returns ``(columns, logp, stats)`` for the post-warmup draws, where
    ``columns`` has shape ``(n_draws, n_columns)`` from ``to_columns``.
    """
    q = np.asarray(q0, dtype=float)
    logp, grad = logp_and_grad(q)
    if not np.isfinite(logp):
        raise ValueError("initial point has non-finite log density")
    dim = q.size
    sampler = NUTS(logp_and_grad, dim, rng, step_size=1.0, max_depth=max_depth, jit_target=jit_target)
    sampler.find_reasonable_step_size(q, logp, grad)
    adapt = DualAveraging(sampler.step_size, target=target_accept)
    schedule = WindowedAdaptation(n_warmup)
    welford = _Welford(dim)

    for i in range(n_warmup):
        q, logp, grad, st = sampler.transition(q, logp, grad)
        sampler.step_size = adapt.update(st["accept_stat"])
        if schedule.in_slow_window(i):
            welford.add(q)
            if schedule.window_closes(i):
                sampler.inv_metric = welford.regularized_variance()
                welford = _Welford(dim)
                sampler.find_reasonable_step_size(q, logp, grad)
                adapt.restart(sampler.step_size)
    if n_warmup > 0:
        sampler.step_size = adapt.final_step_size

    first = to_columns(q)
    columns = np.empty((n_draws, first.size))
    logps = np.empty(n_draws)
    stats = {k: np.empty(n_draws) for k in STAT_NAMES}
    for i in range(n_draws):
        q, logp, grad, st = sampler.transition(q, logp, grad)
        columns[i] = to_columns(q)
        logps[i] = logp
        for k in STAT_NAMES:
            stats[k][i] = st[k]
    stats["inv_metric"] = sampler.inv_metric.copy()
    return columns, logps, stats
