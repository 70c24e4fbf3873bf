"""Synthetic data-generating process, comparator estimators, and the
replication harness producing bias/RMSE summary tables.

The design: scalar covariate and instrument, a ring interaction network, an
endogenous treatment with a strictly increasing disturbance transform, and a
multiplicative heteroskedastic outcome.  The endogeneity magnitude scales the
rank-dependent part of the outcome noise.  All randomness flows through
counter-based generators keyed by (master seed, scenario, replication), so
runs are reproducible under any parallelism.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .data import build_ring_network, peer_average, spillover, Dataset
from .errors import CatrnetError, InvalidParameterError
from .pipeline import StageConfig, bandwidth_table, catr_over_grid, run_stages

GAMMA_X = 1.0
GAMMA_Z = 1.0
NOISE_SD = 0.7
C_LAMBDA_SEED = 101
C_LAMBDA_POINTS = 1_000_000

DEFAULT_ESTIMATORS = ("oracle", "tau1", "tau5", "tau10", "exogenous")
TAU_MULTIPLIERS = {"tau1": 1.0, "tau5": 5.0, "tau10": 10.0}


def dgp_beta1(t, s):
    return 0.4 * np.sin(1.5 * t) + 0.2 * s - 0.2 * np.sqrt((t**2 + s**2) / 2.0)


def dgp_beta2(t, s):
    return 0.2 * t - 0.4 * np.cos(1.5 * s) + 0.2 * np.sqrt((t**2 + s**2) / 2.0)


def dgp_lambda_raw(u, v):
    """Rank-dependent noise mean before centering."""
    pu = ndtr(u)
    pv = ndtr(v)
    return 0.3 * u + 0.3 * v + pu * pv * (1.0 + 0.5 * pu * pv)


def dgp_g(t, s):
    return 0.3 * t + 0.3 * s + 0.2 * np.cos((t + s) / 2.0)


def dgp_eta(u):
    """Strictly increasing disturbance transform of the treatment equation."""
    return np.sqrt(0.5 + 2.0 * u) + ndtr(u - 0.5)


_DGP_FUNCTIONS = {
    "beta1": dgp_beta1,
    "beta2": dgp_beta2,
    "lambda_raw": dgp_lambda_raw,
    "g": dgp_g,
    "eta": dgp_eta,
}


def eval_dgp_function(name, *args):
    if name not in _DGP_FUNCTIONS:
        raise InvalidParameterError(f"unknown function {name!r}")
    return _DGP_FUNCTIONS[name](*args)


def true_catr(t, s, x):
    """Average response at treatment pair (t, s) for scalar covariate x."""
    return dgp_beta1(t, s) + x * dgp_beta2(t, s)


def eta_inverse(values, iterations=60):
    """Invert the disturbance transform on [0, 1] by bisection."""
    values = np.asarray(values, dtype=np.float64)
    lo_val = dgp_eta(np.float64(0.0))
    hi_val = dgp_eta(np.float64(1.0))
    assert np.all(values >= lo_val - 1e-9) and np.all(values <= hi_val + 1e-9), (
        "target outside the transform range; transform must bracket all inputs"
    )
    lo = np.zeros_like(values)
    hi = np.ones_like(values)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        below = dgp_eta(mid) < values
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


_c_lambda_cache = {}


def compute_c_lambda(k, n_mc=C_LAMBDA_POINTS, seed=C_LAMBDA_SEED, integrand=dgp_lambda_raw):
    """Centering constant: the mean of the raw rank-noise surface.

    The own rank is uniform; the peer rank is the inverse transform of the
    average transformed rank over k independent uniforms.  Monte Carlo with a
    fixed seed, cached per (k, n_mc, seed).
    """
    if n_mc < 10**5:
        raise InvalidParameterError(f"n_mc must be >= 1e5, got {n_mc}")
    key = (k, n_mc, seed, integrand is dgp_lambda_raw and "default" or id(integrand))
    if key in _c_lambda_cache:
        return _c_lambda_cache[key]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, k))))
    u = rng.random(n_mc)
    peer_u = rng.random((n_mc, k))
    v = eta_inverse(dgp_eta(peer_u).mean(axis=1))
    value = float(np.mean(integrand(u, v)))
    _c_lambda_cache[key] = value
    return value


@dataclass(frozen=True)
class DgpConfig:
    n: int
    k: int
    rho: float
    seed: object
    c_lambda: float = None
    noise_sd: float = NOISE_SD

    def __post_init__(self):
        if self.rho <= 0:
            raise InvalidParameterError(f"rho must be positive, got {self.rho}")
        if self.k <= 0 or self.k % 2 != 0 or self.k >= self.n:
            raise InvalidParameterError(f"need even 0 < k < n, got k={self.k}, n={self.n}")


@dataclass(frozen=True)
class DgpDraw:
    dataset: Dataset
    net: object
    s: np.ndarray
    u: np.ndarray
    v: np.ndarray
    eps: np.ndarray
    glambda: np.ndarray  # conditional mean of the noise term given the ranks
    config: DgpConfig


def draw_dgp(cfg):
    """One synthetic sample: ring network, endogenous treatment, outcome."""
    c_lam = cfg.c_lambda if cfg.c_lambda is not None else compute_c_lambda(cfg.k)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    n = cfg.n
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    u = rng.random(n)
    upsilon = cfg.noise_sd * rng.standard_normal(n)

    net = build_ring_network(n, cfg.k)
    t = GAMMA_X * x + GAMMA_Z * z + dgp_eta(u)
    s = spillover(net, t)
    v = eta_inverse(peer_average(net, dgp_eta(u)))
    lam = dgp_lambda_raw(u, v) - c_lam
    eps = cfg.rho * lam + upsilon
    g_vals = dgp_g(t, s)
    y = dgp_beta1(t, s) + x * dgp_beta2(t, s) + g_vals * eps

    ds = Dataset(
        y=y,
        t=t,
        x=np.column_stack([np.ones(n), x]),
        z=z[:, None],
        ids=tuple(str(i) for i in range(n)),
    )
    return DgpDraw(
        dataset=ds,
        net=net,
        s=s,
        u=u,
        v=v,
        eps=eps,
        glambda=g_vals * cfg.rho * lam,
        config=cfg,
    )


@dataclass(frozen=True)
class Scenario:
    k: int
    n: int
    rho: float


@dataclass(frozen=True)
class EvalSpec:
    """Evaluation grid: equally spaced treatment levels at fixed spillover
    levels, one covariate value."""

    t_min: float = 0.47
    t_max: float = 2.90
    t_count: int = 50
    s_levels: tuple = None
    x_value: float = 1.0

    def t_grid(self):
        return np.linspace(self.t_min, self.t_max, self.t_count)

    def resolve_s(self, k):
        if self.s_levels is not None:
            return tuple(self.s_levels)
        if k == 2:
            return (0.84, 1.70)
        if k == 6:
            return (1.20, 1.70)
        return (1.70,)


@dataclass
class ScenarioResult:
    scenario: Scenario
    s_levels: tuple
    reps_requested: int
    reps_completed: int
    failures: list
    unreliable: bool
    # {(s_level, estimator): {"aabias": float, "armse": float}}
    cells: dict


@dataclass
class McReport:
    scenarios: list
    estimators: tuple
    eval_spec: EvalSpec
    master_seed: int
    reps: int

    def rows(self):
        """Table rows: one per (metric, scenario, s level) with estimator columns."""
        out = []
        for metric in ("AABIAS", "ARMSE"):
            for res in self.scenarios:
                for s in res.s_levels:
                    row = {
                        "metric": metric,
                        "k": res.scenario.k,
                        "n": res.scenario.n,
                        "rho": res.scenario.rho,
                        "s": s,
                        "reps": res.reps_completed,
                        "unreliable": res.unreliable,
                    }
                    for est in self.estimators:
                        row[est] = res.cells[(s, est)][metric.lower()]
                    out.append(row)
        return out

    def to_jsonable(self):
        return {
            "master_seed": self.master_seed,
            "reps": self.reps,
            "estimators": list(self.estimators),
            "eval": {
                "t_min": self.eval_spec.t_min,
                "t_max": self.eval_spec.t_max,
                "t_count": self.eval_spec.t_count,
                "x_value": self.eval_spec.x_value,
            },
            "rows": self.rows(),
            "failures": {
                f"k={r.scenario.k},n={r.scenario.n},rho={r.scenario.rho}": r.failures
                for r in self.scenarios
            },
        }


def _replication_seed(master_seed, scenario, rep):
    return (int(master_seed), scenario.k, scenario.n, int(round(scenario.rho * 1000)), rep)


def _proposed_taus(estimators, n):
    mults = [TAU_MULTIPLIERS[e] for e in estimators if e in TAU_MULTIPLIERS]
    return tuple(m / n for m in mults)


def run_replication(scenario, rep, master_seed, estimators, eval_spec, grid_L, quad_points, c_lam):
    """One simulated dataset pushed through every estimator variant.

    Returns {estimator: values} with values aligned to the flattened
    (s level, t grid) evaluation points.
    """
    cfg = DgpConfig(
        n=scenario.n,
        k=scenario.k,
        rho=scenario.rho,
        seed=_replication_seed(master_seed, scenario, rep),
        c_lambda=c_lam,
    )
    draw = draw_dgp(cfg)
    taus = _proposed_taus(estimators, scenario.n)
    config = StageConfig(
        grid_L=grid_L,
        taus=taus if taus else (None,),
        quad_points=quad_points,
        fit_unpenalized=False,
    )
    stages = run_stages(draw.dataset, draw.net, scenario.k, config)

    x_vec = np.array([1.0, eval_spec.x_value])
    t_grid = eval_spec.t_grid()
    points = [
        (float(t0), float(s0), x_vec)
        for s0 in eval_spec.resolve_s(scenario.k)
        for t0 in t_grid
    ]
    bws = bandwidth_table(stages, points)

    out = {}
    for name in estimators:
        if name == "oracle":
            ests = catr_over_grid(
                stages,
                points,
                adjustment="external",
                external=draw.glambda[stages.sub.indices],
                bandwidths=bws,
                with_ci=False,
            )
        elif name == "exogenous":
            ests = catr_over_grid(
                stages, points, adjustment="zero", bandwidths=bws, with_ci=False
            )
        elif name in TAU_MULTIPLIERS:
            ests = catr_over_grid(
                stages,
                points,
                adjustment="fitted",
                tau=TAU_MULTIPLIERS[name] / scenario.n,
                bandwidths=bws,
                with_ci=False,
            )
        else:
            raise InvalidParameterError(f"unknown estimator variant {name!r}")
        out[name] = np.array([e.value for e in ests])
    return out


def _run_scenario(scenario, reps, master_seed, estimators, eval_spec, grid_L, quad_points, threads):
    c_lam = compute_c_lambda(scenario.k)
    args = (master_seed, estimators, eval_spec, grid_L, quad_points, c_lam)

    results = [None] * reps
    failures = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {
                pool.submit(run_replication, scenario, rep, *args): rep for rep in range(reps)
            }
            for fut, rep in futures.items():
                try:
                    results[rep] = fut.result()
                except (CatrnetError, np.linalg.LinAlgError) as exc:
                    failures.append(f"rep {rep}: {exc}")
    else:
        for rep in range(reps):
            try:
                results[rep] = run_replication(scenario, rep, *args)
            except (CatrnetError, np.linalg.LinAlgError) as exc:
                failures.append(f"rep {rep}: {exc}")

    s_levels = eval_spec.resolve_s(scenario.k)
    t_grid = eval_spec.t_grid()
    n_t = t_grid.size
    truth = {
        s: true_catr(t_grid, s, eval_spec.x_value) for s in s_levels
    }
    completed = [r for r in results if r is not None]
    cells = {}
    if not completed:
        nan_cell = {"aabias": float("nan"), "armse": float("nan")}
        return ScenarioResult(
            scenario=scenario,
            s_levels=s_levels,
            reps_requested=reps,
            reps_completed=0,
            failures=failures,
            unreliable=True,
            cells={(s, est): dict(nan_cell) for s in s_levels for est in estimators},
        )
    for est in estimators:
        stack = np.array([r[est] for r in completed])  # (R, n_s * n_t)
        for j, s in enumerate(s_levels):
            block = stack[:, j * n_t : (j + 1) * n_t]
            bias = block.mean(axis=0) - truth[s]
            rmse = np.sqrt(np.mean((block - truth[s][None, :]) ** 2, axis=0))
            cells[(s, est)] = {
                "aabias": float(np.mean(np.abs(bias))),
                "armse": float(np.mean(rmse)),
            }
    return ScenarioResult(
        scenario=scenario,
        s_levels=s_levels,
        reps_requested=reps,
        reps_completed=len(completed),
        failures=failures,
        unreliable=len(failures) > 0.1 * reps,
        cells=cells,
    )


def run_monte_carlo(
    scenarios,
    reps,
    estimators=DEFAULT_ESTIMATORS,
    eval_spec=None,
    master_seed=0,
    grid_L=199,
    quad_points=10_000,
    threads=1,
):
    """Replicate every scenario and summarize bias and RMSE per estimator."""
    if reps < 2:
        raise InvalidParameterError(f"reps must be >= 2, got {reps}")
    if not scenarios:
        raise InvalidParameterError("scenario list is empty")
    eval_spec = eval_spec or EvalSpec()
    results = [
        _run_scenario(
            sc, reps, master_seed, tuple(estimators), eval_spec, grid_L, quad_points, threads
        )
        for sc in scenarios
    ]
    return McReport(
        scenarios=results,
        estimators=tuple(estimators),
        eval_spec=eval_spec,
        master_seed=master_seed,
        reps=reps,
    )
