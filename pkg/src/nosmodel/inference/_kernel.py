"""Compiled log posterior and gradient for :class:`NOSPosterior`.

The numpy component functions in ``datamodel`` and ``process`` define the
model; this kernel fuses them into one loop nest for the sampler. Tests
check the two routes against each other.
"""

import math

import numpy as np
from numba import njit

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
DIFFUSE_VAR = 100.0


@njit(cache=True, error_model="numpy")
def _log1pexp(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True, error_model="numpy")
def logp_grad(
    v, grad, n_pop, n_year, offsets,
    z, s2, cell, source, in_char, outlier, prev, gap,
    source_sd, char_sd, tau_scale, slab_sd, local_scale, innovations,
):
    """Fill ``grad`` and return the log posterior (``-inf`` off-support).

    ``offsets`` holds the start of each segment in layout order: eta, level,
    smoothing_sd, smoothing_sd_scale, source_scale, char_scale, tau, slab,
    local_scale, rho_pma, end. With ``innovations`` false the second-difference
    terms of the walk are left out; the non-centred view adds them itself.
    """
    o_eta, o_level, o_lam, o_scale, o_src = offsets[0], offsets[1], offsets[2], offsets[3], offsets[4]
    o_char, o_tau, o_slab, o_gamma, o_rho = offsets[5], offsets[6], offsets[7], offsets[8], offsets[9]
    n_gamma = o_rho - o_gamma
    n_obs = z.shape[0]
    for j in range(grad.shape[0]):
        grad[j] = 0.0

    scale = math.exp(v[o_scale])
    char = math.exp(v[o_char])
    tau = math.exp(v[o_tau])
    slab = math.exp(v[o_slab])
    src = np.empty(4)
    for k in range(4):
        src[k] = math.exp(v[o_src + k])
    u_rho = v[o_rho]
    if u_rho >= 0:
        rho = 1.0 / (1.0 + math.exp(-u_rho))
    else:
        e = math.exp(u_rho)
        rho = e / (1.0 + e)
    if not (0.0 < scale < np.inf and 0.0 < char < np.inf and 0.0 < tau < np.inf and 0.0 < slab < np.inf):
        return -np.inf
    for k in range(4):
        if not 0.0 < src[k] < np.inf:
            return -np.inf

    lp = 0.0
    jac = 0.0

    # process prior: RW2 per population with hierarchical smoothing sd
    d_scale = 0.0
    for c in range(n_pop):
        lam = math.exp(v[o_lam + c])
        if not 0.0 < lam < np.inf:
            return -np.inf
        base = o_eta + c * n_year
        r0 = v[base] - v[o_level + c]
        lp += -HALF_LOG_2PI - math.log(10.0) - 0.5 * r0 * r0 / DIFFUSE_VAR
        grad[base] -= r0 / DIFFUSE_VAR
        grad[o_level + c] += r0 / DIFFUSE_VAR
        if n_year >= 2:
            d1 = v[base + 1] - v[base]
            lp += -HALF_LOG_2PI - math.log(10.0) - 0.5 * d1 * d1 / DIFFUSE_VAR
            g = -d1 / DIFFUSE_VAR
            grad[base + 1] += g
            grad[base] -= g
        # derivatives with respect to log(lambda) and log(scale) directly
        d_loglam = 0.0
        log_lam = v[o_lam + c]
        for t in range(2, n_year if innovations else 0):
            d2 = v[base + t] - 2.0 * v[base + t - 1] + v[base + t - 2]
            r = d2 / lam
            lp += -HALF_LOG_2PI - log_lam - 0.5 * r * r
            g = -r / lam
            grad[base + t] += g
            grad[base + t - 1] -= 2.0 * g
            grad[base + t - 2] += g
            d_loglam += r * r - 1.0
        q = lam / scale
        lp += LOG_2 - math.log(scale) - HALF_LOG_2PI - 0.5 * q * q
        d_loglam -= q * q
        d_scale += q * q - 1.0
        grad[o_lam + c] += d_loglam + 1.0
        jac += log_lam
    lp += LOG_2 - HALF_LOG_2PI - 0.5 * scale * scale
    d_scale -= scale * scale
    grad[o_scale] += d_scale + 1.0
    jac += v[o_scale]

    # data density
    sd = np.empty(n_obs)
    x = np.empty(n_obs)
    dx = np.zeros(n_obs)
    kk = np.zeros(n_obs)
    for i in range(n_obs):
        var = s2[i]
        if source[i] >= 0:
            var += src[source[i]] ** 2
        if in_char[i]:
            var += char * char
        if outlier[i] >= 0:
            gamma = math.exp(v[o_gamma + outlier[i]])
            u = tau * gamma
            if u == 0.0:
                k = 0.0
            else:
                k = 1.0 / (1.0 + (slab / u) ** 2)
            kk[i] = k
            var += slab * slab * k
        if not var > 0.0:
            return -np.inf
        sd[i] = math.sqrt(var)
        x[i] = (z[i] - v[o_eta + cell[i]]) / sd[i]
    d_rho = 0.0
    for i in range(n_obs):
        lp += -HALF_LOG_2PI - math.log(sd[i])
        p = prev[i]
        if p >= 0:
            a = rho ** gap[i]
            w_var = 1.0 - a * a
            if not w_var > 0.0:
                return -np.inf
            e = x[i] - a * x[p]
            w = e / w_var
            lp += -0.5 * math.log(w_var) - 0.5 * e * w
            dx[i] -= w
            dx[p] += w * a
            d_a = a / w_var + w * x[p] - w * w * a
            d_rho += d_a * gap[i] * rho ** (gap[i] - 1)
        else:
            lp += -0.5 * x[i] * x[i]
            dx[i] -= x[i]
    d_tau = 0.0
    d_slab = 0.0
    for i in range(n_obs):
        grad[o_eta + cell[i]] -= dx[i] / sd[i]
        d_var = -(1.0 + x[i] * dx[i]) / (2.0 * sd[i] * sd[i])
        if source[i] >= 0:
            grad[o_src + source[i]] += d_var * 2.0 * src[source[i]] ** 2
        if in_char[i]:
            grad[o_char] += d_var * 2.0 * char * char
        if outlier[i] >= 0:
            k = kk[i]
            u = tau * math.exp(v[o_gamma + outlier[i]])
            one_minus_k = 1.0 / (1.0 + (u / slab) ** 2)
            per_obs = d_var * 2.0 * slab * slab * k * one_minus_k
            grad[o_gamma + outlier[i]] += per_obs
            d_tau += per_obs
            d_slab += d_var * k * k * 2.0 * slab * slab
    grad[o_tau] += d_tau
    grad[o_slab] += d_slab
    grad[o_rho] += d_rho * rho * (1.0 - rho)

    # data-model priors
    for k in range(4):
        lp += LOG_2 - math.log(source_sd) - HALF_LOG_2PI - 0.5 * (src[k] / source_sd) ** 2
        grad[o_src + k] += -(src[k] ** 2) / source_sd**2 + 1.0
        jac += v[o_src + k]
    lp += LOG_2 - math.log(char_sd) - HALF_LOG_2PI - 0.5 * (char / char_sd) ** 2
    grad[o_char] += -(char**2) / char_sd**2 + 1.0
    lp += math.log(2.0 / (math.pi * tau_scale)) - math.log1p((tau / tau_scale) ** 2)
    grad[o_tau] += -2.0 * tau * tau / (tau_scale * tau_scale + tau * tau) + 1.0
    lp += LOG_2 - math.log(slab_sd) - HALF_LOG_2PI - 0.5 * (slab / slab_sd) ** 2
    grad[o_slab] += -(slab**2) / slab_sd**2 + 1.0
    jac += v[o_char] + v[o_tau] + v[o_slab]
    for g in range(n_gamma):
        gamma = math.exp(v[o_gamma + g])
        if not gamma < np.inf:
            return -np.inf
        lp += math.log(2.0 / (math.pi * local_scale)) - math.log1p((gamma / local_scale) ** 2)
        grad[o_gamma + g] += -2.0 * gamma * gamma / (local_scale * local_scale + gamma * gamma) + 1.0
        jac += v[o_gamma + g]
    jac += -_log1pexp(-u_rho) - _log1pexp(u_rho)
    grad[o_rho] += 1.0 - 2.0 * rho
    return lp + jac


LEVEL_SD = math.sqrt(DIFFUSE_VAR)


@njit(cache=True, error_model="numpy")
def noncentred_to_centred(w, v, n_pop, n_year, o_eta, o_level, o_lam):
    """Map sampler coordinates ``w`` to the layout vector ``v`` in place.

    In ``w`` the latent values from the third year on are replaced by
    standardized second-difference innovations and each level by its
    standardized offset from the first latent value; everything else is
    shared.
    """
    for j in range(w.shape[0]):
        v[j] = w[j]
    for c in range(n_pop):
        lam = math.exp(w[o_lam + c])
        base = o_eta + c * n_year
        for t in range(2, n_year):
            v[base + t] = 2.0 * v[base + t - 1] - v[base + t - 2] + lam * w[base + t]
        v[o_level + c] = v[base] + LEVEL_SD * w[o_level + c]


@njit(cache=True, error_model="numpy")
def centred_to_noncentred(v, w, n_pop, n_year, o_eta, o_level, o_lam):
    for j in range(v.shape[0]):
        w[j] = v[j]
    for c in range(n_pop):
        lam = math.exp(v[o_lam + c])
        base = o_eta + c * n_year
        for t in range(2, n_year):
            w[base + t] = (v[base + t] - 2.0 * v[base + t - 1] + v[base + t - 2]) / lam
        w[o_level + c] = (v[o_level + c] - v[base]) / LEVEL_SD


@njit(cache=True, error_model="numpy")
def pull_back_gradient(w, g, n_pop, n_year, o_eta, o_level, o_lam):
    """Turn the layout-space gradient ``g`` into the ``w``-space gradient in place.

    The log-Jacobian ``(n_year - 2) * log(lambda_c)`` cancels the
    normalizing terms of the innovations, so neither appears here.
    """
    adj = np.empty(n_year)
    for c in range(n_pop):
        lam = math.exp(w[o_lam + c])
        base = o_eta + c * n_year
        g_level = g[o_level + c]
        g[base] += g_level
        g[o_level + c] = LEVEL_SD * g_level
        for t in range(n_year - 1, -1, -1):
            a = g[base + t]
            if t + 1 < n_year and t + 1 >= 2:
                a += 2.0 * adj[t + 1]
            if t + 2 < n_year:
                a -= adj[t + 2]
            adj[t] = a
        d_loglam = 0.0
        for t in range(n_year):
            if t >= 2:
                g[base + t] = adj[t] * lam
                d_loglam += adj[t] * lam * w[base + t]
            else:
                g[base + t] = adj[t]
        g[o_lam + c] += d_loglam


@njit(cache=True, error_model="numpy")
def posterior_target(v, grad, args):
    """``logp_grad`` in the ``f(q, grad, args)`` form the compiled sampler calls."""
    lp = logp_grad(v, grad, *args)
    if not math.isfinite(lp):
        grad[:] = 0.0
        return -np.inf
    for j in range(grad.shape[0]):
        if math.isnan(grad[j]):
            raise FloatingPointError("NaN gradient of the log posterior")
    return lp


@njit(cache=True, error_model="numpy")
def view_target(w, grad, args):
    """Log density and gradient in the non-centred sampler coordinates."""
    v, n_pop, n_year, o_eta, o_level, o_lam, kernel_args = args
    noncentred_to_centred(w, v, n_pop, n_year, o_eta, o_level, o_lam)
    for j in range(v.shape[0]):
        if not math.isfinite(v[j]):
            grad[:] = 0.0
            return -np.inf
    lp = posterior_target(v, grad, kernel_args)
    if not math.isfinite(lp):
        return -np.inf
    pull_back_gradient(w, grad, n_pop, n_year, o_eta, o_level, o_lam)
    # standardized innovations are exactly standard normal here; evaluating
    # them from the rebuilt series would divide rounding error by lambda
    for c in range(n_pop):
        base = o_eta + c * n_year
        for t in range(2, n_year):
            x = w[base + t]
            lp += -HALF_LOG_2PI - 0.5 * x * x
            grad[base + t] -= x
    return lp
