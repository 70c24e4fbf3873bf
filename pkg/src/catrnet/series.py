"""Penalized tensor-spline regression and the marginal-integration split of
the multiplicative bias-correction term.

The regression stacks, per observation, the covariate-by-(T,S) tensor rows
and the (T,S)-by-centered-(U,V) tensor rows, and solves ridge-type normal
equations.  The bias surface over the ranks and its (T,S) profile are then
recovered by integrating the fitted product against quadrature rules.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.linalg.blas import dsyrk

from .basis import CenteredBasis, penalty_matrix, tensor_eval
from .errors import DegenerateLambdaError, InvalidParameterError, SingularDesignError
from .quadrature import make_quadrature
from .splines import eval_basis

NORMAL_EQ_RTOL = 1e-8
LAMBDA_NORM_FLOOR = 1e-8


def ts_rectangle(spec):
    return (spec.t.boundary, spec.s.boundary)


UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True)
class SeriesSystem:
    """Assembled regression system shared by all penalty levels."""

    design: np.ndarray  # (n, dx*K_TS + K_TSUV)
    gram: np.ndarray
    moment: np.ndarray  # design^T y
    y: np.ndarray
    spec: object
    centered_uv: CenteredBasis
    penalty: np.ndarray
    dx: int


@dataclass(frozen=True)
class SeriesFit:
    """Coefficients of the series stage.

    ``theta_beta`` has one K_TS row per covariate; ``theta_glambda`` holds
    the K_TSUV product-term coefficients.
    """

    theta_beta: np.ndarray
    theta_glambda: np.ndarray
    spec: object
    centered_uv: CenteredBasis
    tau: float
    penalized: bool
    residual_norm: float
    n: int

    def beta_at(self, t, s):
        """Covariate coefficient functions at (t, s): (dx,) or (m, dx)."""
        rows = tensor_eval(self.spec.t, self.spec.s, t, s)
        return rows @ self.theta_beta.T

    def beta_curvature(self, t, s, direction):
        """Second derivative of each coefficient function in t or in s."""
        if direction == "t":
            bt = eval_basis(self.spec.t, t, deriv=2)
            bs = eval_basis(self.spec.s, s)
        elif direction == "s":
            bt = eval_basis(self.spec.t, t)
            bs = eval_basis(self.spec.s, s, deriv=2)
        else:
            raise InvalidParameterError(f"direction must be 't' or 's', got {direction!r}")
        return np.kron(bt, bs) @ self.theta_beta.T

    def glambda_at(self, t, s, u, v):
        """Fitted product surface g*lambda at pointwise (t, s, u, v) arrays."""
        pts_ts = tensor_eval(self.spec.t, self.spec.s, t, s)
        pts_uv = self.centered_uv.eval(u, v)
        theta = self.theta_glambda.reshape(self.spec.K_TS, self.spec.K_UV)
        return np.einsum("ij,jk,ik->i", np.atleast_2d(pts_ts), theta, np.atleast_2d(pts_uv))

    def to_jsonable(self):
        return {
            "theta_beta": self.theta_beta.tolist(),
            "theta_glambda": self.theta_glambda.tolist(),
            "tau": self.tau,
            "penalized": self.penalized,
            "residual_norm": self.residual_norm,
            "n": self.n,
            "knots": {
                name: {
                    "degree": sp.degree,
                    "internal": sp.internal_knots.tolist(),
                    "boundary": list(sp.boundary),
                }
                for name, sp in (
                    ("t", self.spec.t),
                    ("s", self.spec.s),
                    ("u", self.spec.u),
                    ("v", self.spec.v),
                )
            },
            "uv_mean": self.centered_uv.mean.tolist(),
        }


def build_series_system(ds, sub, s, cv, spec):
    """Assemble design, Gram, and penalty once; reused across penalty levels."""
    idx = sub.indices
    if idx.size == 0:
        raise InvalidParameterError("empty subsample: nothing to fit")
    y = ds.y[idx]
    x = ds.x[idx]
    t = ds.t[idx]
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] != idx.size:
        raise InvalidParameterError("spillover vector must align with the subsample")
    centered = CenteredBasis.from_sample(spec.u, spec.v, cv.u_hat, cv.v_hat)

    p_ts = tensor_eval(spec.t, spec.s, t, s)
    p_uv = centered.eval(cv.u_hat, cv.v_hat)
    n = idx.size
    block_x = np.einsum("ij,ik->ijk", x, p_ts).reshape(n, -1)
    block_gl = np.einsum("ij,ik->ijk", p_ts, p_uv).reshape(n, -1)
    design = np.ascontiguousarray(np.hstack([block_x, block_gl]))
    if not np.isfinite(design).all():
        raise InvalidParameterError("non-finite series regressors")

    gram = dsyrk(1.0, design, trans=1)
    gram = gram + np.triu(gram, 1).T
    moment = design.T @ y
    penalty = penalty_matrix(spec, ds.dx)
    return SeriesSystem(
        design=design,
        gram=gram,
        moment=moment,
        y=y,
        spec=spec,
        centered_uv=centered,
        penalty=penalty,
        dx=ds.dx,
    )


def _solve_normal_equations(A, b, allow_lstsq):
    """SPD solve with escalating diagonal jitter and a residual refit check."""
    scale = np.mean(np.diag(A))
    for rel in (0.0, 1e-12, 1e-10, 1e-8):
        try:
            factor = scipy.linalg.cho_factor(
                A + rel * scale * np.eye(A.shape[0]) if rel else A, lower=True
            )
        except np.linalg.LinAlgError:
            continue
        theta = scipy.linalg.cho_solve(factor, b)
        resid = np.max(np.abs(A @ theta - b))
        if resid <= NORMAL_EQ_RTOL * max(np.max(np.abs(b)), 1e-300):
            return theta
    if allow_lstsq:
        theta, *_ = np.linalg.lstsq(A, b, rcond=None)
        resid = np.max(np.abs(A @ theta - b))
        if resid <= NORMAL_EQ_RTOL * max(np.max(np.abs(b)), 1e-300):
            return theta
    raise SingularDesignError(
        "normal equations are singular; increase the penalty level (tau > 0)"
    )


def fit_series_from_system(system, tau, penalized=True):
    if penalized and tau < 0:
        raise InvalidParameterError(f"tau must be >= 0, got {tau}")
    if not penalized:
        tau = 0.0
    n = system.y.shape[0]
    A = system.gram + tau * n * system.penalty if tau > 0 else system.gram
    theta = _solve_normal_equations(A, system.moment, allow_lstsq=tau == 0.0)
    K_TS = system.spec.K_TS
    dx = system.dx
    theta_beta = theta[: dx * K_TS].reshape(dx, K_TS)
    theta_gl = theta[dx * K_TS :]
    resid = system.y - system.design @ theta
    return SeriesFit(
        theta_beta=theta_beta,
        theta_glambda=theta_gl,
        spec=system.spec,
        centered_uv=system.centered_uv,
        tau=float(tau),
        penalized=bool(penalized and tau > 0),
        residual_norm=float(np.linalg.norm(resid)),
        n=n,
    )


def fit_series(ds, sub, s, cv, spec, tau, penalized=True):
    """One-shot entry point: assemble the system and solve at one penalty."""
    system = build_series_system(ds, sub, s, cv, spec)
    return fit_series_from_system(system, tau, penalized)


@dataclass(frozen=True)
class GLambdaFit:
    """Marginally integrated factors of the fitted product surface.

    ``lambda_coef`` profiles the bias surface over the ranks;
    ``g_coef`` (filled by :func:`recover_g`) profiles the treatment pair and
    integrates to one over the support rectangle by construction.
    """

    lambda_coef: np.ndarray  # (K_UV,)
    p_star_ts: np.ndarray  # (K_TS,)
    spec: object
    centered_uv: CenteredBasis
    quad_ts_kind: str
    g_coef: np.ndarray = None  # (K_TS,)
    p_star_uv: np.ndarray = None  # (K_UV,)
    norm_lambda_sq: float = None
    quad_uv_kind: str = None

    def lambda_at(self, u, v):
        return self.centered_uv.eval(u, v) @ self.lambda_coef

    def g_at(self, t, s):
        if self.g_coef is None:
            raise InvalidParameterError("g profile not recovered yet")
        return tensor_eval(self.spec.t, self.spec.s, t, s) @ self.g_coef

    def adjustment(self, t, s, u, v):
        """Fitted g(t,s) * lambda(u,v) at aligned observation arrays."""
        return self.g_at(t, s) * self.lambda_at(u, v)

    def to_jsonable(self):
        return {
            "lambda_coef": self.lambda_coef.tolist(),
            "g_coef": None if self.g_coef is None else self.g_coef.tolist(),
            "p_star_ts": self.p_star_ts.tolist(),
            "p_star_uv": None if self.p_star_uv is None else self.p_star_uv.tolist(),
            "norm_lambda_sq": self.norm_lambda_sq,
            "quad_ts_kind": self.quad_ts_kind,
            "quad_uv_kind": self.quad_uv_kind,
        }


def recover_lambda(fit, quad_ts):
    """Integrate the fitted product over the treatment rectangle.

    Stores the integrated (T, S) basis so the rank profile is a plain basis
    expansion.
    """
    spec = fit.spec
    pts = quad_ts.points
    p_star_ts = quad_ts.integrate(tensor_eval(spec.t, spec.s, pts[:, 0], pts[:, 1]))
    theta = fit.theta_glambda.reshape(spec.K_TS, spec.K_UV)
    lambda_coef = theta.T @ p_star_ts
    return GLambdaFit(
        lambda_coef=lambda_coef,
        p_star_ts=p_star_ts,
        spec=spec,
        centered_uv=fit.centered_uv,
        quad_ts_kind=quad_ts.kind,
    )


def recover_g(fit, lam, quad_uv):
    """Weighted marginal integration over the ranks.

    The weight is the rank profile scaled by its squared integral, which
    forces the recovered treatment profile to integrate to one.  Raises when
    the profile is numerically zero (exogenous data): the caller may then
    zero out the adjustment term instead.
    """
    spec = fit.spec
    pts = quad_uv.points
    p_uv_rows = fit.centered_uv.eval(pts[:, 0], pts[:, 1])
    lam_vals = p_uv_rows @ lam.lambda_coef
    norm_sq = float(quad_uv.integrate(lam_vals * lam_vals))
    if norm_sq < LAMBDA_NORM_FLOOR:
        raise DegenerateLambdaError(
            f"integrated squared rank profile {norm_sq:.3e} below floor; "
            "model is effectively exogenous"
        )
    omega = lam_vals / norm_sq
    p_star_uv = quad_uv.integrate(p_uv_rows * omega[:, None])
    theta = fit.theta_glambda.reshape(spec.K_TS, spec.K_UV)
    g_coef = theta @ p_star_uv
    return replace(
        lam,
        g_coef=g_coef,
        p_star_uv=p_star_uv,
        norm_lambda_sq=norm_sq,
        quad_uv_kind=quad_uv.kind,
    )


def default_quadratures(spec, n_points=10_000, kind="halton"):
    """Treatment-rectangle and unit-square rules used by the pipeline."""
    quad_ts = make_quadrature(kind, ts_rectangle(spec), n_points)
    quad_uv = make_quadrature(kind, UNIT_SQUARE, n_points)
    return quad_ts, quad_uv
