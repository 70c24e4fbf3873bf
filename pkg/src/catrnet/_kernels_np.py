"""Pure-numpy reference implementations of the hot numeric kernels.

These are the fallback path used when numba is unavailable or disabled via
``CATRNET_DISABLE_NUMBA=1``; see ``catrnet._accel``.  The numba versions in
``catrnet._kernels_nb`` mirror these signatures one-to-one, and the parity
between the two paths is tested directly.
"""

import numpy as np


def bspline_basis(x, knots, degree):
    """Dense B-spline design matrix via the Cox-de Boor recursion.

    Parameters
    ----------
    x : (m,) array, already clamped into the knot support.
    knots : full clamped knot vector (boundary knots repeated degree+1 times).
    degree : polynomial degree >= 0.

    Returns
    -------
    (m, K) array with K = len(knots) - degree - 1.
    """
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[0]
    K = knots.shape[0] - degree - 1
    span = np.searchsorted(knots, x, side="right") - 1
    np.clip(span, degree, K - 1, out=span)

    vals = np.zeros((m, degree + 1))
    vals[:, 0] = 1.0
    left = np.empty((m, degree + 1))
    right = np.empty((m, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            temp = np.where(den > 0.0, vals[:, r] / np.where(den > 0.0, den, 1.0), 0.0)
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((m, K))
    cols = span[:, None] - degree + np.arange(degree + 1)[None, :]
    out[np.arange(m)[:, None], cols] = vals
    return out


def halton_points(n, skip=1):
    """First ``n`` points of the 2-d Halton sequence in bases (2, 3).

    Indices start at ``skip`` so the origin (index 0) is excluded.
    """
    idx = np.arange(skip, skip + n, dtype=np.int64)
    out = np.empty((n, 2))
    out[:, 0] = _radical_inverse(idx, 2)
    out[:, 1] = _radical_inverse(idx, 3)
    return out


def _radical_inverse(idx, base):
    idx = idx.copy()
    out = np.zeros(idx.shape[0])
    f = 1.0
    while idx.max() > 0:
        f /= base
        out += f * (idx % base)
        idx //= base
    return out


def cqr_irls_pass(W, T, gamma, b, levels, eps):
    """One accumulation pass of the smoothed composite-check-loss IRLS.

    Returns the blocks of the majorized normal equations plus the exact
    (unsmoothed) composite objective at the current iterate:
    ``A_gg, A_gb, A_bb, c_g, c_b, obj``.
    """
    n = T.shape[0]
    r = (T - W @ gamma)[:, None] - b[None, :]
    obj = float(np.sum(r * (levels[None, :] - (r < 0.0))))
    w = 0.5 / np.sqrt(r * r + eps * eps)
    wsum_i = w.sum(axis=1)
    u_c = levels - 0.5
    A_gg = (W * wsum_i[:, None]).T @ W
    A_gb = W.T @ w
    A_bb = w.sum(axis=0)
    c_g = W.T @ (T * wsum_i) + u_c.sum() * W.sum(axis=0)
    c_b = w.T @ T + n * u_c
    return A_gg, A_gb, A_bb, c_g, c_b, obj


def argmin_abs_grid(res, eta):
    """Index of the grid value closest to each residual; ties pick the
    lowest index."""
    d = np.abs(res[:, None] - eta[None, :])
    return np.argmin(d, axis=1).astype(np.int64)


def epanechnikov_weights(t_obs, s_obs, t0, s0, h_t, h_s):
    """Product Epanechnikov weights (h_t*h_s)^-1 W(dt/h_t) W(ds/h_s)."""
    ut = (t_obs - t0) / h_t
    us = (s_obs - s0) / h_s
    wt = np.where(np.abs(ut) <= 1.0, 0.75 * (1.0 - ut * ut), 0.0)
    ws = np.where(np.abs(us) <= 1.0, 0.75 * (1.0 - us * us), 0.0)
    return wt * ws / (h_t * h_s)


def ll_gram(x, t_obs, s_obs, y, t0, s0, h_t, h_s):
    """Weighted Gram matrix and moment vector of the local-linear design.

    The design row is (X_i, X_i*(T_i-t0)/h_t, X_i*(S_i-s0)/h_s).  Returns
    ``A`` (3dx, 3dx), ``bvec`` (3dx,), and the count of kernel-active rows.
    """
    w = epanechnikov_weights(t_obs, s_obs, t0, s0, h_t, h_s)
    active = w > 0.0
    n_eff = int(active.sum())
    xa = x[active]
    wa = w[active]
    dt = (t_obs[active] - t0) / h_t
    ds = (s_obs[active] - s0) / h_s
    design = np.hstack([xa, xa * dt[:, None], xa * ds[:, None]])
    A = (design * wa[:, None]).T @ design
    bvec = design.T @ (wa * y[active])
    return A, bvec, n_eff


def ll_sandwich(x, t_obs, s_obs, resid, t0, s0, h_t, h_s):
    """Level-block moment sums for the sandwich covariance.

    Returns ``S1 = sum_i X_i X_i^T w_i`` and
    ``S2 = sum_i X_i X_i^T resid_i^2 w_i^2`` over kernel-active rows.
    """
    w = epanechnikov_weights(t_obs, s_obs, t0, s0, h_t, h_s)
    active = w > 0.0
    xa = x[active]
    wa = w[active]
    ra = resid[active]
    S1 = (xa * wa[:, None]).T @ xa
    S2 = (xa * (ra * ra * wa * wa)[:, None]).T @ xa
    return S1, S2, int(active.sum())
