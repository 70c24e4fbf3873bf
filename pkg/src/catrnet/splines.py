"""Univariate B-spline bases on a clamped knot vector.

Evaluation uses the Cox-de Boor recursion (through the selected kernel
backend), derivatives use knot-difference transfer matrices, and Gram /
roughness matrices are integrated exactly with per-span Gauss-Legendre
quadrature.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import InvalidSpecError


@dataclass(frozen=True)
class SplineSpec:
    """A univariate B-spline basis: degree, internal knots, and support.

    The basis dimension is ``K = len(internal_knots) + degree + 1``.
    Internal knots must lie strictly inside the support interval and be
    non-decreasing; evaluation outside the support clamps to the boundary.
    """

    degree: int
    internal_knots: np.ndarray
    boundary: tuple
    knot_vector: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lo, hi = float(self.boundary[0]), float(self.boundary[1])
        internal = np.asarray(self.internal_knots, dtype=np.float64)
        if self.degree < 0:
            raise InvalidSpecError(f"degree must be >= 0, got {self.degree}")
        if not np.isfinite([lo, hi]).all() or lo >= hi:
            raise InvalidSpecError(f"invalid support interval [{lo}, {hi}]")
        if internal.ndim != 1:
            raise InvalidSpecError("internal_knots must be a 1-d array")
        if internal.size and (np.diff(internal) < 0).any():
            raise InvalidSpecError("internal knots must be non-decreasing")
        if internal.size and (internal.min() <= lo or internal.max() >= hi):
            raise InvalidSpecError("internal knots must lie strictly inside the support")
        full = np.concatenate(
            [np.full(self.degree + 1, lo), internal, np.full(self.degree + 1, hi)]
        )
        internal.setflags(write=False)
        full.setflags(write=False)
        object.__setattr__(self, "internal_knots", internal)
        object.__setattr__(self, "boundary", (lo, hi))
        object.__setattr__(self, "knot_vector", full)

    @property
    def K(self):
        return self.internal_knots.size + self.degree + 1

    @classmethod
    def from_quantiles(cls, values, n_internal=2, degree=3, boundary=None):
        """Place internal knots at the empirical quantiles of ``values``.

        The support defaults to the sample range.  Quantiles that collide
        with the boundary (possible under heavy ties) are nudged inward so
        the spec stays valid.
        """
        values = np.asarray(values, dtype=np.float64)
        if boundary is None:
            boundary = (float(values.min()), float(values.max()))
        lo, hi = boundary
        probs = np.arange(1, n_internal + 1) / (n_internal + 1)
        knots = np.quantile(values, probs)
        tiny = 1e-9 * (hi - lo)
        knots = np.clip(knots, lo + tiny, hi - tiny)
        return cls(degree=degree, internal_knots=knots, boundary=(lo, hi))


def eval_basis(spec, x, deriv=0):
    """Evaluate all K basis functions (or a derivative) at ``x``.

    ``x`` may be a scalar or a 1-d array; inputs outside the support are
    clamped to the boundary.  Returns shape (K,) or (m, K).
    """
    scalar = np.isscalar(x) or np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=np.float64))
    lo, hi = spec.boundary
    xa = np.clip(xa, lo, hi)
    if deriv == 0:
        out = _accel.bspline_basis(xa, spec.knot_vector, spec.degree)
    else:
        if deriv > spec.degree:
            out = np.zeros((xa.shape[0], spec.K))
        else:
            lower = _accel.bspline_basis(xa, spec.knot_vector, spec.degree - deriv)
            out = lower @ _deriv_transfer(spec, deriv).T
    return out[0] if scalar else out


def _deriv_transfer(spec, order):
    """Matrix T with B^(order)(x) = T @ B_lower(x), both on spec's knots."""
    knots = spec.knot_vector
    mat = np.eye(spec.K)
    for q in range(spec.degree, spec.degree - order, -1):
        Kq = knots.size - q - 1
        A = np.zeros((Kq, Kq + 1))
        for i in range(Kq):
            d0 = knots[i + q] - knots[i]
            d1 = knots[i + q + 1] - knots[i + 1]
            if d0 > 0:
                A[i, i] = q / d0
            if d1 > 0:
                A[i, i + 1] = -q / d1
        mat = mat @ A
    return mat


def gram_matrix(spec, deriv=0):
    """Exact integral of outer products of basis derivatives over the support.

    ``G[i, j] = int B_i^(deriv)(x) B_j^(deriv)(x) dx`` computed with
    Gauss-Legendre quadrature on each knot span (exact: the integrand is
    piecewise polynomial).
    """
    if deriv > spec.degree:
        return np.zeros((spec.K, spec.K))
    nodes, weights = np.polynomial.legendre.leggauss(spec.degree + 1)
    lo, hi = spec.boundary
    breaks = np.unique(np.concatenate([[lo], spec.internal_knots, [hi]]))
    G = np.zeros((spec.K, spec.K))
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        half = 0.5 * (b - a)
        xs = 0.5 * (a + b) + half * nodes
        B = eval_basis(spec, xs, deriv=deriv)
        G += (B * (half * weights)[:, None]).T @ B
    return 0.5 * (G + G.T)


def integral_vector(spec):
    """Exact ``int B_i(x) dx`` over the support for every basis function."""
    nodes, weights = np.polynomial.legendre.leggauss(spec.degree + 1)
    lo, hi = spec.boundary
    breaks = np.unique(np.concatenate([[lo], spec.internal_knots, [hi]]))
    v = np.zeros(spec.K)
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        half = 0.5 * (b - a)
        xs = 0.5 * (a + b) + half * nodes
        v += eval_basis(spec, xs).T @ (half * weights)
    return v
