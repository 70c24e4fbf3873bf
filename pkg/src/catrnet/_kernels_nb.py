"""Numba-jitted implementations of the hot numeric kernels.

Signature-compatible with ``catrnet._kernels_np``; selected at import time by
``catrnet._accel``.  Loops are written per observation, which is where numba
beats the broadcasting fallback on large samples.
"""

import numba as nb
import numpy as np

_jit = nb.njit(cache=True)


@_jit
def bspline_basis(x, knots, degree):
    m = x.shape[0]
    K = knots.shape[0] - degree - 1
    out = np.zeros((m, K))
    vals = np.empty(degree + 1)
    left = np.empty(degree + 1)
    right = np.empty(degree + 1)
    for p in range(m):
        xp = x[p]
        span = np.searchsorted(knots, xp, side="right") - 1
        if span < degree:
            span = degree
        if span > K - 1:
            span = K - 1
        vals[0] = 1.0
        for j in range(1, degree + 1):
            left[j] = xp - knots[span + 1 - j]
            right[j] = knots[span + j] - xp
            saved = 0.0
            for r in range(j):
                den = right[r + 1] + left[j - r]
                if den > 0.0:
                    temp = vals[r] / den
                else:
                    temp = 0.0
                vals[r] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            vals[j] = saved
        for j in range(degree + 1):
            out[p, span - degree + j] = vals[j]
    return out


@_jit
def halton_points(n, skip=1):
    out = np.empty((n, 2))
    for col in range(2):
        base = 2 if col == 0 else 3
        for i in range(n):
            idx = skip + i
            f = 1.0
            v = 0.0
            while idx > 0:
                f /= base
                v += f * (idx % base)
                idx //= base
            out[i, col] = v
    return out


@_jit
def cqr_irls_pass(W, T, gamma, b, levels, eps):
    n, p = W.shape
    L = b.shape[0]
    A_gg = np.zeros((p, p))
    A_gb = np.zeros((p, L))
    A_bb = np.zeros(L)
    c_g = np.zeros(p)
    c_b = np.zeros(L)
    obj = 0.0
    e2 = eps * eps
    for i in range(n):
        fit = 0.0
        for k in range(p):
            fit += W[i, k] * gamma[k]
        base = T[i] - fit
        wsum = 0.0
        for l in range(L):
            r = base - b[l]
            if r < 0.0:
                obj += r * (levels[l] - 1.0)
            else:
                obj += r * levels[l]
            w = 0.5 / np.sqrt(r * r + e2)
            wsum += w
            A_bb[l] += w
            c_b[l] += w * T[i]
            for k in range(p):
                A_gb[k, l] += w * W[i, k]
        for k in range(p):
            wk = wsum * W[i, k]
            for k2 in range(p):
                A_gg[k, k2] += wk * W[i, k2]
            c_g[k] += wsum * T[i] * W[i, k]
    u_c_sum = 0.0
    for l in range(L):
        c_b[l] += n * (levels[l] - 0.5)
        u_c_sum += levels[l] - 0.5
    for k in range(p):
        s = 0.0
        for i in range(n):
            s += W[i, k]
        c_g[k] += u_c_sum * s
    return A_gg, A_gb, A_bb, c_g, c_b, obj


@_jit
def argmin_abs_grid(res, eta):
    m = res.shape[0]
    L = eta.shape[0]
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        best = np.abs(res[i] - eta[0])
        idx = 0
        for l in range(1, L):
            d = np.abs(res[i] - eta[l])
            if d < best:
                best = d
                idx = l
        out[i] = idx
    return out


@_jit
def ll_gram(x, t_obs, s_obs, y, t0, s0, h_t, h_s):
    n, dx = x.shape
    q = 3 * dx
    A = np.zeros((q, q))
    bvec = np.zeros(q)
    row = np.empty(q)
    n_eff = 0
    scale = 1.0 / (h_t * h_s)
    for i in range(n):
        ut = (t_obs[i] - t0) / h_t
        us = (s_obs[i] - s0) / h_s
        if np.abs(ut) > 1.0 or np.abs(us) > 1.0:
            continue
        w = 0.5625 * (1.0 - ut * ut) * (1.0 - us * us) * scale
        if w <= 0.0:
            continue
        n_eff += 1
        for k in range(dx):
            row[k] = x[i, k]
            row[dx + k] = x[i, k] * ut
            row[2 * dx + k] = x[i, k] * us
        for a in range(q):
            wa = w * row[a]
            bvec[a] += wa * y[i]
            for c in range(q):
                A[a, c] += wa * row[c]
    return A, bvec, n_eff


@_jit
def ll_sandwich(x, t_obs, s_obs, resid, t0, s0, h_t, h_s):
    n, dx = x.shape
    S1 = np.zeros((dx, dx))
    S2 = np.zeros((dx, dx))
    n_eff = 0
    scale = 1.0 / (h_t * h_s)
    for i in range(n):
        ut = (t_obs[i] - t0) / h_t
        us = (s_obs[i] - s0) / h_s
        if np.abs(ut) > 1.0 or np.abs(us) > 1.0:
            continue
        w = 0.5625 * (1.0 - ut * ut) * (1.0 - us * us) * scale
        if w <= 0.0:
            continue
        n_eff += 1
        w2r = w * w * resid[i] * resid[i]
        for a in range(dx):
            for c in range(dx):
                xac = x[i, a] * x[i, c]
                S1[a, c] += w * xac
                S2[a, c] += w2r * xac
    return S1, S2, n_eff
