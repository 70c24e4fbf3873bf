"""Composite quantile regression of the treatment equation and the
grid-search recovery of the rank control variables.

The treatment equation is linear in (covariates, instruments) with a shared
slope vector across quantile levels and one intercept per level.  The solver
minimizes the summed check loss by iteratively reweighted least squares on a
smoothed (Huberized) check function with a decreasing smoothing parameter;
the block structure (slopes shared, intercepts diagonal) is eliminated by a
Schur complement so each iteration costs O(n L).
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from . import _accel
from .data import peer_average
from .errors import ConvergenceError, InvalidParameterError, SingularDesignError

EPS_SCHEDULE = tuple(10.0 ** -np.arange(1, 7))
REL_TOL = 1e-9
MAX_ITER = 500


def check_loss(x, u):
    """Quantile check function x * (u - 1{x < 0}); nonnegative, zero at 0."""
    if not 0.0 < u < 1.0:
        raise InvalidParameterError(f"quantile level must be in (0,1), got {u}")
    x = np.asarray(x, dtype=np.float64)
    return x * (u - (x < 0.0))


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile levels inside (0, 1)."""

    levels: np.ndarray

    def __post_init__(self):
        levels = np.ascontiguousarray(self.levels, dtype=np.float64)
        if levels.ndim != 1 or levels.size == 0:
            raise InvalidParameterError("quantile grid must be a non-empty 1-d array")
        if levels.min() <= 0.0 or levels.max() >= 1.0 or (np.diff(levels) <= 0).any():
            raise InvalidParameterError("levels must be strictly increasing inside (0,1)")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @property
    def L(self):
        return self.levels.size

    @classmethod
    def equally_spaced(cls, L):
        return cls(np.arange(1, L + 1) / (L + 1))


@dataclass(frozen=True)
class CqrFit:
    """Shared slopes, monotone per-level intercepts, and the absorbed
    location constant.

    ``eta_hat`` is normalized so the entry at the level closest to 0.5 is
    exactly zero; the removed constant lives in ``pi_const`` and is part of
    the treatment-index prediction.
    """

    gamma: np.ndarray
    eta_hat: np.ndarray
    grid: QuantileGrid
    loss: float
    pi_const: float
    iterations: int

    def design(self, ds):
        return np.hstack([ds.x[:, 1:], ds.z])

    def predict_index(self, ds):
        return self.design(ds) @ self.gamma + self.pi_const

    def residuals(self, ds):
        return ds.t - self.predict_index(ds)


@dataclass(frozen=True)
class ControlVariables:
    """Grid-searched rank estimates for own and peer-average disturbances.

    ``u_hat``/``v_hat`` align with ``indices`` (the estimation subsample);
    ``residuals`` covers every unit so peer averages stay available.
    """

    u_hat: np.ndarray
    v_hat: np.ndarray
    residuals: np.ndarray
    indices: np.ndarray


def fit_cqr(ds, grid, tol=REL_TOL, max_iter=MAX_ITER, eps_schedule=EPS_SCHEDULE):
    """Fit the composite quantile regression of T on (X, Z).

    Raises SingularDesignError for rank-deficient designs and
    ConvergenceError when the iteration budget runs out before the final
    smoothing stage converges.
    """
    W = np.hstack([ds.x[:, 1:], ds.z])
    T = ds.t
    n, p = W.shape
    levels = grid.levels
    L = levels.size
    if n <= p + L:
        raise InvalidParameterError(
            f"need n > dx + dz + L; got n={n}, slopes={p}, levels={L}"
        )
    if np.linalg.matrix_rank(W) < p:
        raise SingularDesignError("CQR design (covariates, instruments) is rank deficient")

    gamma, *_ = np.linalg.lstsq(W, T, rcond=None)
    resid = T - W @ gamma
    b = np.quantile(resid, levels)

    total_iter = 0
    obj = None
    for stage, eps in enumerate(eps_schedule):
        converged = False
        prev = None  # judge convergence within the smoothing stage
        while total_iter < max_iter:
            A_gg, A_gb, A_bb, c_g, c_b, obj = _accel.cqr_irls_pass(
                W, T, gamma, b, levels, eps
            )
            inv_bb = 1.0 / A_bb
            S = A_gg - (A_gb * inv_bb[None, :]) @ A_gb.T
            rhs = c_g - A_gb @ (c_b * inv_bb)
            try:
                gamma = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                raise SingularDesignError("CQR normal equations are singular") from None
            b = (c_b - A_gb.T @ gamma) * inv_bb
            total_iter += 1
            if prev is not None and abs(obj - prev) <= tol * max(1.0, abs(prev)):
                converged = True
                break
            prev = obj
        if not converged and stage == len(eps_schedule) - 1:
            raise ConvergenceError(
                f"CQR solver did not converge within {max_iter} iterations "
                f"(objective {obj:.6g})",
                iterations=total_iter,
                objective=obj,
            )

    eta = isotonic_regression(b).x
    l_mid = int(np.argmin(np.abs(levels - 0.5)))
    shift = eta[l_mid]
    eta = eta - shift
    eta[l_mid] = 0.0
    # objective at the returned (projected, shift-normalized) parameters
    r = (T - W @ gamma - shift)[:, None] - eta[None, :]
    loss = float(np.sum(r * (levels[None, :] - (r < 0.0))))
    return CqrFit(
        gamma=gamma,
        eta_hat=eta,
        grid=grid,
        loss=loss,
        pi_const=float(shift),
        iterations=total_iter,
    )


def control_variables(fit, ds, net, sub):
    """Invert residuals through the fitted quantile curve by grid search.

    For each subsample unit the own rank minimizes |res_i - eta(u_l)| and the
    peer rank minimizes the same for the weighted peer-residual average; ties
    resolve to the lower level and out-of-range residuals land on the
    endpoints.
    """
    eta = np.ascontiguousarray(fit.eta_hat)
    if eta.size == 0:
        raise InvalidParameterError("empty quantile grid")
    levels = fit.grid.levels
    res = fit.residuals(ds)
    idx = sub.indices
    u_hat = levels[_accel.argmin_abs_grid(np.ascontiguousarray(res[idx]), eta)]
    peer_avg = peer_average(net, res, idx)
    v_hat = levels[_accel.argmin_abs_grid(np.ascontiguousarray(peer_avg), eta)]
    return ControlVariables(u_hat=u_hat, v_hat=v_hat, residuals=res, indices=idx)
