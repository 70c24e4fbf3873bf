"""End-to-end orchestration of the estimation stages.

``run_stages`` executes the shared part once (quantile regression, control
variables, series system, penalized/unpenalized solves, factor recovery),
``bandwidth_table`` and ``catr_over_grid`` then evaluate the treatment
response on a grid for any adjustment variant: the fitted product term, the
zero adjustment (exogenous comparator), or an externally supplied vector
(the infeasible oracle in simulations).

Errors raised inside a stage are re-raised with a stage label so callers can
report where a run failed.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .basis import TensorBasisSpec
from .cqr import QuantileGrid, control_variables, fit_cqr
from .data import homogeneous_subsample, spillover
from .errors import CatrnetError, InvalidParameterError
from .kernel_stage import catr_estimate, optimal_bandwidths, pilot_omegas
from .series import (
    build_series_system,
    default_quadratures,
    fit_series_from_system,
    recover_g,
    recover_lambda,
)


@contextmanager
def _stage(label):
    try:
        yield
    except CatrnetError as exc:
        raise type(exc)(f"[{label}] {exc}") from exc


@dataclass(frozen=True)
class StageConfig:
    grid_L: int = 199
    taus: tuple = (None,)  # None entries mean 5/n
    n_internal: int = 2
    degree: int = 3
    quad_kind: str = "halton"
    quad_points: int = 10_000
    bandwidth_tau: float = None  # defaults to the first fitted tau
    fit_unpenalized: bool = True

    def resolved_taus(self, n):
        return tuple(5.0 / n if t is None else float(t) for t in self.taus)


@dataclass
class Stages:
    """Everything the evaluation grid needs, fitted once per dataset."""

    ds: object
    net: object
    sub: object
    s_sub: np.ndarray
    cqr_fit: object
    cv: object
    spec: TensorBasisSpec
    fits: dict
    unpen: object
    curvature_fit: object
    gl: dict
    sd_t: float
    sd_s: float
    bandwidth_tau: float
    pilot_resid: np.ndarray
    config: StageConfig
    quad_ts: object = field(repr=False, default=None)
    quad_uv: object = field(repr=False, default=None)

    @property
    def n(self):
        return self.sub.n

    @property
    def t_sub(self):
        return self.ds.t[self.sub.indices]

    @property
    def x_sub(self):
        return self.ds.x[self.sub.indices]

    @property
    def y_sub(self):
        return self.ds.y[self.sub.indices]

    def adjustment_vector(self, variant, tau=None, external=None):
        """Per-observation bias-correction term for one estimator variant."""
        if variant == "zero":
            return np.zeros(self.n)
        if variant == "external":
            ext = np.asarray(external, dtype=np.float64)
            if ext.shape[0] != self.n:
                raise InvalidParameterError("external adjustment length mismatch")
            return ext
        if variant == "fitted":
            tau = self.bandwidth_tau if tau is None else tau
            gl = self.gl[tau]
            return gl.adjustment(self.t_sub, self.s_sub, self.cv.u_hat, self.cv.v_hat)
        raise InvalidParameterError(f"unknown adjustment variant {variant!r}")


def run_stages(ds, net, group_size, config=StageConfig()):
    """Quantile regression through factor recovery, shared across variants."""
    with _stage("subsample"):
        sub = homogeneous_subsample(net, group_size)
        if sub.n == 0:
            raise InvalidParameterError(f"no units with peer count {group_size}")
    with _stage("cqr"):
        grid = QuantileGrid.equally_spaced(config.grid_L)
        cqr_fit = fit_cqr(ds, grid)
    with _stage("control-variables"):
        cv = control_variables(cqr_fit, ds, net, sub)
        s_sub = spillover(net, ds.t, units=sub.indices)
    t_sub = ds.t[sub.indices]

    with _stage("series"):
        spec = TensorBasisSpec.from_samples(
            t_sub, s_sub, cv.u_hat, cv.v_hat, n_internal=config.n_internal, degree=config.degree
        )
        system = build_series_system(ds, sub, s_sub, cv, spec)
        quad_ts, quad_uv = default_quadratures(spec, config.quad_points, config.quad_kind)

        taus = config.resolved_taus(sub.n)
        fits = {}
        gl = {}
        for tau in taus:
            if tau in fits:
                continue
            fits[tau] = fit_series_from_system(system, tau)

        bandwidth_tau = config.bandwidth_tau if config.bandwidth_tau is not None else taus[0]
        if bandwidth_tau not in fits:
            fits[bandwidth_tau] = fit_series_from_system(system, bandwidth_tau)

        # Curvature plug-ins use the least penalized level of the tuning
        # grid: the unregularized solve interpolates at these basis
        # dimensions and its second derivatives destabilize the bandwidth
        # constant.  The unpenalized fit is still produced (when the sample
        # supports one) for diagnostics and dumps.
        tau_curv = min(1.0 / sub.n, min(fits))
        if tau_curv not in fits:
            fits[tau_curv] = fit_series_from_system(system, tau_curv)
        curvature_fit = fits[tau_curv]
        dims = ds.dx * spec.K_TS + spec.K_TSUV
        unpen = None
        if config.fit_unpenalized and sub.n > dims:
            unpen = fit_series_from_system(system, 0.0, penalized=False)
        ref = fits[bandwidth_tau]

    with _stage("marginal-integration"):
        for tau, fit in fits.items():
            gl[tau] = recover_g(fit, recover_lambda(fit, quad_ts), quad_uv)
    pilot_resid = system.y - system.design @ np.concatenate(
        [ref.theta_beta.ravel(), ref.theta_glambda]
    )
    return Stages(
        ds=ds,
        net=net,
        sub=sub,
        s_sub=s_sub,
        cqr_fit=cqr_fit,
        cv=cv,
        spec=spec,
        fits=fits,
        unpen=unpen,
        curvature_fit=curvature_fit,
        gl=gl,
        sd_t=float(np.std(t_sub, ddof=1)),
        sd_s=float(np.std(s_sub, ddof=1)),
        bandwidth_tau=bandwidth_tau,
        pilot_resid=pilot_resid,
        config=config,
        quad_ts=quad_ts,
        quad_uv=quad_uv,
    )


def bandwidth_table(stages, points):
    """Plug-in bandwidths for a list of (t, s, x_vector) evaluation points."""
    out = []
    n = stages.n
    for t0, s0, x_eval in points:
        x_eval = np.asarray(x_eval, dtype=np.float64)
        omega1, omega2, _ = pilot_omegas(
            stages.x_sub,
            stages.t_sub,
            stages.s_sub,
            stages.pilot_resid,
            t0,
            s0,
            stages.sd_t,
            stages.sd_s,
            n,
        )
        out.append(
            optimal_bandwidths(
                t0,
                s0,
                x_eval,
                stages.curvature_fit,
                stages.sd_t,
                stages.sd_s,
                n,
                omega1,
                omega2,
            )
        )
    return out


def catr_over_grid(
    stages,
    points,
    adjustment="fitted",
    tau=None,
    external=None,
    bandwidths=None,
    with_ci=True,
    with_bias=False,
):
    """Treatment-response estimates over evaluation points for one variant."""
    adj = stages.adjustment_vector(adjustment, tau=tau, external=external)
    if bandwidths is None:
        bandwidths = bandwidth_table(stages, points)
    results = []
    for (t0, s0, x_eval), bw in zip(points, bandwidths):
        results.append(
            catr_estimate(
                t0,
                s0,
                np.asarray(x_eval, dtype=np.float64),
                stages.x_sub,
                stages.t_sub,
                stages.s_sub,
                stages.y_sub,
                adj,
                bw,
                with_ci=with_ci,
                curvature_fit=stages.curvature_fit if with_bias else None,
            )
        )
    return results
