"""Compiled NUTS transition, step for step the same as ``NUTS.transition``.

The target is a jitted function ``f(q, grad, args) -> log density`` that
fills ``grad``. Random numbers are drawn beforehand by the caller, so the
compiled and interpreted transitions produce the same chain.
"""

import math

import numpy as np
from numba import njit

MAX_DELTA_H = 1000.0


@njit(error_model="numpy")
def log_add_exp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    hi = max(a, b)
    return hi + math.log1p(math.exp(-abs(a - b)))


@njit(error_model="numpy")
def _hamiltonian(logp, p, inv_metric):
    if not math.isfinite(logp):
        return np.inf
    h = -logp + 0.5 * np.dot(p, inv_metric * p)
    return h if math.isfinite(h) else np.inf


@njit(error_model="numpy")
def _criterion(p_sharp_minus, p_sharp_plus, rho):
    return np.dot(p_sharp_plus, rho) > 0 and np.dot(p_sharp_minus, rho) > 0


@njit(error_model="numpy")
def _build_tree(f, args, depth, q, p, g, lp, direction, eps, inv_metric, h0, u_tree, acc):
    """Returns ``(ok, q, p, g, lp, sample_q, sample_p, sample_g, sample_lp, log_w, rho, p_beg, p_end)``.

    ``acc`` holds ``[n_leapfrog, sum_metro, divergent, next u_tree index]``.
    """
    if depth == 0:
        step = direction * eps
        p_half = p + 0.5 * step * g
        qn = q + step * inv_metric * p_half
        gn = np.empty(q.size)
        lpn = f(qn, gn, args)
        if math.isfinite(lpn):
            pn = p_half + 0.5 * step * gn
        else:
            pn = p_half
        h = _hamiltonian(lpn, pn, inv_metric)
        acc[0] += 1.0
        if h - h0 > MAX_DELTA_H:
            acc[2] = 1.0
        log_w = h0 - h
        acc[1] += 1.0 if log_w > 0 else math.exp(log_w)
        if acc[2] > 0:
            return False, qn, pn, gn, lpn, qn, pn, gn, lpn, -np.inf, pn, pn, pn
        return True, qn, pn, gn, lpn, qn, pn, gn, lpn, log_w, pn.copy(), pn, pn

    (ok, q, p, g, lp, sq, sp, sg, slp, lw_init, rho_init, p_beg, p_init_end) = _build_tree(
        f, args, depth - 1, q, p, g, lp, direction, eps, inv_metric, h0, u_tree, acc
    )
    if not ok:
        return False, q, p, g, lp, sq, sp, sg, slp, -np.inf, rho_init, p_beg, p_init_end
    (ok, q, p, g, lp, fq, fp, fg, flp, lw_final, rho_final, p_final_beg, p_end) = _build_tree(
        f, args, depth - 1, q, p, g, lp, direction, eps, inv_metric, h0, u_tree, acc
    )
    if not ok:
        return False, q, p, g, lp, sq, sp, sg, slp, -np.inf, rho_init, p_beg, p_end

    lw = log_add_exp(lw_init, lw_final)
    u = u_tree[int(acc[3])]
    acc[3] += 1.0
    if u < math.exp(lw_final - lw):
        sq, sp, sg, slp = fq, fp, fg, flp
    rho = rho_init + rho_final
    m = inv_metric
    persist = _criterion(m * p_beg, m * p_end, rho)
    persist = persist and _criterion(m * p_beg, m * p_final_beg, rho_init + p_final_beg)
    persist = persist and _criterion(m * p_init_end, m * p_end, rho_final + p_init_end)
    return persist, q, p, g, lp, sq, sp, sg, slp, lw, rho, p_beg, p_end


@njit(error_model="numpy")
def transition(f, args, q, logp, grad, p0, eps, inv_metric, max_depth, u_dir, u_sel, u_tree):
    """One transition; returns ``(q, logp, grad, stats)`` with stats
    ``[accept_stat, n_leapfrog, tree_depth, divergent, energy]``."""
    h0 = _hamiltonian(logp, p0, inv_metric)
    fq, fp, fg, flp = q, p0, grad, logp
    bq, bp, bg, blp = q, p0, grad, logp
    sq, sg, slp, sp = q, grad, logp, p0
    p_fwd_fwd = p0
    p_fwd_bck = p0
    p_bck_fwd = p0
    p_bck_bck = p0
    rho = p0.copy()
    rho_fwd = rho
    rho_bck = rho
    log_sum_w = 0.0
    acc = np.zeros(4)
    m = inv_metric
    depth = 0
    while depth < max_depth:
        if u_dir[depth] > 0.5:
            rho_bck = rho
            p_bck_fwd = p_fwd_bck
            (ok, fq, fp, fg, flp, cq, cp, cg, clp, lw_sub, rho_fwd, p_fwd_bck, p_fwd_fwd) = _build_tree(
                f, args, depth, fq, fp, fg, flp, 1.0, eps, inv_metric, h0, u_tree, acc
            )
        else:
            rho_fwd = rho
            p_fwd_bck = p_bck_fwd
            (ok, bq, bp, bg, blp, cq, cp, cg, clp, lw_sub, rho_bck, p_bck_fwd, p_bck_bck) = _build_tree(
                f, args, depth, bq, bp, bg, blp, -1.0, eps, inv_metric, h0, u_tree, acc
            )
        if not ok:
            break
        depth += 1
        if lw_sub > log_sum_w or u_sel[depth - 1] < math.exp(lw_sub - log_sum_w):
            sq, sp, sg, slp = cq, cp, cg, clp
        log_sum_w = log_add_exp(log_sum_w, lw_sub)
        rho = rho_bck + rho_fwd
        persist = _criterion(m * p_bck_bck, m * p_fwd_fwd, rho)
        persist = persist and _criterion(m * p_bck_bck, m * p_fwd_bck, rho_bck + p_fwd_bck)
        persist = persist and _criterion(m * p_bck_fwd, m * p_fwd_fwd, rho_fwd + p_bck_fwd)
        if not persist:
            break
    stats = np.empty(5)
    stats[4] = _hamiltonian(slp, sp, inv_metric)
    stats[0] = acc[1] / max(acc[0], 1.0)
    stats[1] = acc[0]
    stats[2] = depth
    stats[3] = acc[2]
    return sq, slp, sg, stats
