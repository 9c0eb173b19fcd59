"""Compiled inner loops for the constrained Gaussian updates.

Every routine takes a ``numpy.random.Generator`` so that draws stay tied to
the caller's substream.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_TINY_COEF = 1e-300


@numba.njit(cache=True)
def _tn_positive(a, b, rng):
    """Standard normal restricted to ``(a, b)`` with ``0 <= a < b <= inf``."""
    width = b - a
    if a < 0.4:
        if width > 1.0:
            while True:
                x = abs(rng.standard_normal())
                if a < x < b:
                    return x
        while True:
            x = a + width * rng.random()
            if a < x < b and rng.random() < math.exp(0.5 * (a * a - x * x)):
                return x
    if width * (a + b) <= 2.0:
        while True:
            x = a + width * rng.random()
            if a < x < b and rng.random() < math.exp(0.5 * (a * a - x * x)):
                return x
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        x = a + rng.exponential() / lam
        if a < x < b and rng.random() < math.exp(-0.5 * (x - lam) * (x - lam)):
            return x


@numba.njit(cache=True)
def trunc_std_normal(a, b, rng):
    """Exact draw from ``N(0, 1)`` restricted to the open interval ``(a, b)``."""
    if a >= 0.0:
        return _tn_positive(a, b, rng)
    if b <= 0.0:
        return -_tn_positive(-b, -a, rng)
    if b - a > 2.0:
        while True:
            x = rng.standard_normal()
            if a < x < b:
                return x
    while True:
        x = a + (b - a) * rng.random()
        if a < x < b and rng.random() < math.exp(-0.5 * x * x):
            return x


@numba.njit(cache=True)
def _cholesky(K):
    d = K.shape[0]
    C = np.zeros((d, d))
    for j in range(d):
        s = K[j, j]
        for k in range(j):
            s -= C[j, k] * C[j, k]
        if not s > 0.0:
            return C, False
        C[j, j] = math.sqrt(s)
        for i in range(j + 1, d):
            s = K[i, j]
            for k in range(j):
                s -= C[i, k] * C[j, k]
            C[i, j] = s / C[j, j]
    return C, True


@numba.njit(cache=True)
def _inside(R, lo, hi, x):
    for j in range(R.shape[0]):
        v = 0.0
        for k in range(R.shape[1]):
            v += R[j, k] * x[k]
        if not (lo[j] < v < hi[j]):
            return False
    return True


@numba.njit(cache=True)
def precision_gibbs(K, b, R, lo, hi, x0, n_sweeps, rng):
    """Coordinate Gibbs update of ``x ~ N(K^-1 b, K^-1)`` restricted to ``lo < R x < hi``.

    Works in the coordinates ``z = C' (x - m)`` with ``K = C C'``, so the
    untruncated target is standard normal.  Starts from the feasible ``x0``
    and leaves the truncated law invariant.

    Returns ``(x, status)`` with status 0 on success, 1 if ``K`` is not
    positive definite, 2 if ``x0`` is infeasible, 3 if rounding pushed every
    retry onto a bound (``x0`` is returned).
    """
    d = K.shape[0]
    q = R.shape[0]
    C, ok = _cholesky(K)
    if not ok:
        return x0.copy(), 1
    if not _inside(R, lo, hi, x0):
        return x0.copy(), 2
    # mean m solves C C' m = b
    w = np.empty(d)
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= C[i, k] * w[k]
        w[i] = s / C[i, i]
    m = np.empty(d)
    for i in range(d - 1, -1, -1):
        s = w[i]
        for k in range(i + 1, d):
            s -= C[k, i] * m[k]
        m[i] = s / C[i, i]
    # x = m + W z with W = C'^-1; A = R W; z = C' (x0 - m)
    W = np.zeros((d, d))
    for col in range(d):
        e = np.zeros(d)
        e[col] = 1.0
        for i in range(d - 1, -1, -1):
            s = e[i]
            for k in range(i + 1, d):
                s -= C[k, i] * W[k, col]
            W[i, col] = s / C[i, i]
    A = R @ W
    lo_z = lo - R @ m
    hi_z = hi - R @ m
    z0 = np.zeros(d)
    for i in range(d):
        s = 0.0
        for k in range(i, d):
            s += C[k, i] * (x0[k] - m[k])
        z0[i] = s
    for attempt in range(20):
        z = z0.copy()
        for sweep in range(n_sweeps):
            s_all = A @ z
            for k in range(d):
                zl = -np.inf
                zu = np.inf
                for j in range(q):
                    a = A[j, k]
                    if abs(a) <= _TINY_COEF:
                        continue
                    rest = s_all[j] - a * z[k]
                    u1 = (lo_z[j] - rest) / a
                    u2 = (hi_z[j] - rest) / a
                    if a < 0.0:
                        u1, u2 = u2, u1
                    if u1 > zl:
                        zl = u1
                    if u2 < zu:
                        zu = u2
                if not zl < zu:
                    continue
                znew = trunc_std_normal(zl, zu, rng)
                delta = znew - z[k]
                z[k] = znew
                for j in range(q):
                    s_all[j] += A[j, k] * delta
        x = m + W @ z
        if _inside(R, lo, hi, x):
            return x, 0
    return x0.copy(), 3


@numba.njit(cache=True)
def trunc_std_normal_many(a, b, rng):
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        out[i] = trunc_std_normal(a[i], b[i], rng)
    return out


# ---------------------------------------------------------------------------
# Gibbs sampler rows
#
# Status codes shared by the row kernels: 0 ok, 1 precision not positive
# definite, 2 warm start infeasible, 3 rounding kept the previous point,
# 4 improper inverse-gamma posterior.

OK, NOT_PD, INFEASIBLE_START, KEPT_PREVIOUS, IMPROPER = 0, 1, 2, 3, 4
VAR_FLOOR = 1e-12
HS_FLOOR = 1e-12
HS_CAP = 1e12


@numba.njit(cache=True, nogil=True)
def _forward(C, b):
    """Solve ``C w = b`` for lower-triangular ``C``."""
    d = C.shape[0]
    w = np.empty(d)
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= C[i, k] * w[k]
        w[i] = s / C[i, i]
    return w


@numba.njit(cache=True, nogil=True)
def _backward_t(C, w):
    """Solve ``C' x = w`` for lower-triangular ``C``."""
    d = C.shape[0]
    x = np.empty(d)
    for i in range(d - 1, -1, -1):
        s = w[i]
        for k in range(i + 1, d):
            s -= C[k, i] * x[k]
        x[i] = s / C[i, i]
    return x


@numba.njit(cache=True, nogil=True)
def gaussian_from_precision(K, b, rng):
    """Draw ``N(K^-1 b, K^-1)``; returns ``(x, ok)``."""
    d = K.shape[0]
    C, ok = _cholesky(K)
    if not ok:
        return np.zeros(d), False
    z = np.empty(d)
    for i in range(d):
        z[i] = rng.standard_normal()
    mean = _backward_t(C, _forward(C, b))
    return mean + _backward_t(C, z), True


@numba.njit(cache=True, nogil=True)
def scaled_rows(ptr, R, lo, hi, scale, g, other):
    """Rows of group ``g``; a row with ``scale >= 0`` is multiplied by ``other[scale]``."""
    a = ptr[g]
    q = ptr[g + 1] - a
    d = R.shape[1]
    Rs = np.empty((q, d))
    for j in range(q):
        s = scale[a + j]
        for k in range(d):
            Rs[j, k] = R[a + j, k] * other[s, k] if s >= 0 else R[a + j, k]
    return Rs, lo[a : a + q].copy(), hi[a : a + q].copy()


@numba.njit(cache=True, nogil=True)
def factor_block(E, L, sigma2, F_prev, periods, ptr, R, lo, hi, scale, n_sweeps, rng):
    """Draw every ``f_t`` given the residuals ``E = Y - X beta'``.

    Standard normals for all periods are drawn first (row-major), then each
    restricted period in ``periods`` is replaced by a truncated update
    started from ``F_prev[t]``.  Returns ``(F, status, period)``.
    """
    T, n = E.shape
    r = L.shape[1]
    Ls = np.empty((n, r))
    for i in range(n):
        for j in range(r):
            Ls[i, j] = L[i, j] / sigma2[i]
    K = L.T @ Ls
    for j in range(r):
        K[j, j] += 1.0
    C, ok = _cholesky(K)
    if not ok:
        return F_prev.copy(), NOT_PD, -1
    B = E @ Ls
    F = np.empty((T, r))
    z = np.empty(r)
    for t in range(T):
        for j in range(r):
            z[j] = rng.standard_normal()
        F[t] = _backward_t(C, _forward(C, B[t]) + z)
    for g in range(periods.shape[0]):
        t = periods[g]
        Rs, lo_g, hi_g = scaled_rows(ptr, R, lo, hi, scale, g, L)
        x, status = precision_gibbs(K, B[t].copy(), Rs, lo_g, hi_g, F_prev[t].copy(), n_sweeps, rng)
        if status == NOT_PD or status == INFEASIBLE_START:
            return F, status, t
        F[t] = x
    return F, OK, -1


@numba.njit(cache=True, nogil=True)
def loading_row(e, F, FtF, s2, Vinv, Vinv_l0, l_prev, Rs, lo, hi, n_sweeps, rng):
    """Update ``l_i`` given ``e = y_i - X beta_i``; returns ``(l, status)``."""
    K = Vinv + FtF / s2
    b = Vinv_l0 + (F.T @ e) / s2
    if Rs.shape[0] == 0:
        x, ok = gaussian_from_precision(K, b, rng)
        return (x, OK) if ok else (l_prev.copy(), NOT_PD)
    return precision_gibbs(K, b, Rs, lo, hi, l_prev, n_sweeps, rng)


@numba.njit(cache=True, nogil=True)
def beta_row(target, X, XtX, s2, prior_var, rng):
    """Draw ``beta_i`` for the regression of ``target`` on ``X`` (prior mean zero)."""
    K = XtX / s2
    for j in range(K.shape[0]):
        K[j, j] += 1.0 / prior_var[j]
    x, ok = gaussian_from_precision(K, (X.T @ target) / s2, rng)
    return x, (OK if ok else NOT_PD)


@numba.njit(cache=True, nogil=True)
def sigma_row(resid, alpha0, beta0, rng):
    """Inverse-gamma update of one idiosyncratic variance."""
    shape = alpha0 + 0.5 * resid.shape[0]
    rate = beta0 + 0.5 * np.sum(resid * resid)
    if not (shape > 0.0 and rate > 0.0):
        return VAR_FLOOR, IMPROPER
    return max(rate / rng.gamma(shape, 1.0), VAR_FLOOR), OK


@numba.njit(cache=True, nogil=True)
def _clip_hs(x):
    return min(max(x, HS_FLOOR), HS_CAP)


@numba.njit(cache=True, nogil=True)
def horseshoe_row(slopes, lam, psi, z_lam, z_psi, rng):
    """Update ``lam``, ``psi``, ``z_lam``, ``z_psi`` of one equation, in that order."""
    m = slopes.shape[0]
    k = m + 1
    acc = 0.0
    for j in range(m):
        acc += slopes[j] * slopes[j] / (2.0 * psi[j])
    lam_new = _clip_hs((1.0 / z_lam + acc) / rng.gamma(0.5 * k, 1.0))
    psi_new = np.empty(m)
    for j in range(m):
        psi_new[j] = _clip_hs((1.0 / z_psi[j] + slopes[j] * slopes[j] / (2.0 * lam_new)) / rng.gamma(1.0, 1.0))
    z_lam_new = _clip_hs((1.0 + 1.0 / lam_new) / rng.gamma(1.0, 1.0))
    z_psi_new = np.empty(m)
    for j in range(m):
        z_psi_new[j] = _clip_hs((1.0 + 1.0 / psi_new[j]) / rng.gamma(1.0, 1.0))
    return lam_new, psi_new, z_lam_new, z_psi_new


@numba.njit(cache=True, nogil=True)
def equation_step(
    i, Y, X, XtX, F, FtF, beta_i, l_i, s2, lam, psi, z_lam, z_psi,
    Vinv, Vinv_l0, intercept_var, alpha0, beta0,
    ptr, R, lo, hi, scale, n_sweeps, rng,
):
    """Loadings, coefficients, variance and horseshoe of equation ``i`` given ``F``.

    Returns ``(l, beta, s2, lam, psi, z_lam, z_psi, status, stage)`` where
    ``stage`` names the failing update (0 loadings, 1 beta, 2 sigma2).
    """
    y = Y[:, i].copy()
    e = y - X @ beta_i
    Rs, lo_i, hi_i = scaled_rows(ptr, R, lo, hi, scale, i, F)
    l, status = loading_row(e, F, FtF, s2, Vinv, Vinv_l0, l_i, Rs, lo_i, hi_i, n_sweeps, rng)
    if status == NOT_PD or status == INFEASIBLE_START:
        return l_i, beta_i, s2, lam, psi, z_lam, z_psi, status, 0
    fl = F @ l
    k = beta_i.shape[0]
    prior_var = np.empty(k)
    prior_var[0] = intercept_var
    for j in range(1, k):
        prior_var[j] = _clip_hs(lam * psi[j - 1])
    beta, status = beta_row(y - fl, X, XtX, s2, prior_var, rng)
    if status != OK:
        return l, beta_i, s2, lam, psi, z_lam, z_psi, status, 1
    s2_new, status = sigma_row(y - X @ beta - fl, alpha0, beta0, rng)
    if status != OK:
        return l, beta, s2, lam, psi, z_lam, z_psi, status, 2
    lam_new, psi_new, z_lam_new, z_psi_new = horseshoe_row(beta[1:].copy(), lam, psi, z_lam, z_psi, rng)
    return l, beta, s2_new, lam_new, psi_new, z_lam_new, z_psi_new, OK, 3


@numba.njit(cache=True, nogil=True)
def gibbs_iteration(
    Y, X, XtX, beta, L, sigma2, F, lam, psi, z_lam, z_psi,
    Vinv, Vinv_l0, intercept_var, alpha0, beta0,
    f_periods, f_ptr, f_R, f_lo, f_hi, f_scale,
    l_ptr, l_R, l_lo, l_hi, l_scale,
    n_sweeps, factor_rng, equation_rngs,
):
    """One full sweep: the factor block, then every equation in order.

    State arrays are updated in place (``F`` is returned).  Returns
    ``(F, status, where, stage)``; on failure ``where`` is the period
    (``stage == -1``) or the equation.
    """
    E = Y - X @ beta.T
    F_new, status, t = factor_block(E, L, sigma2, F, f_periods, f_ptr, f_R, f_lo, f_hi, f_scale, n_sweeps, factor_rng)
    if status != OK and status != KEPT_PREVIOUS:
        return F, status, t, -1
    FtF = F_new.T @ F_new
    for i in range(Y.shape[1]):
        l, b, s2, lm, ps, zl, zp, status, stage = equation_step(
            i, Y, X, XtX, F_new, FtF, beta[i].copy(), L[i].copy(), sigma2[i],
            lam[i], psi[i].copy(), z_lam[i], z_psi[i].copy(),
            Vinv[i], Vinv_l0[i], intercept_var, alpha0, beta0,
            l_ptr, l_R, l_lo, l_hi, l_scale, n_sweeps, equation_rngs[i],
        )
        if status != OK and status != KEPT_PREVIOUS:
            return F_new, status, i, stage
        L[i] = l
        beta[i] = b
        sigma2[i] = s2
        lam[i] = lm
        psi[i] = ps
        z_lam[i] = zl
        z_psi[i] = zp
    return F_new, OK, -1, 0
