"""Two-dimensional integration rules over rectangles.

The default rule scales an unscrambled Halton sequence in bases (2, 3) onto
the target rectangle with equal weights; a tensor-product trapezoid rule is
available as a cross-check.
"""

from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import InvalidParameterError

HALTON = "halton"
TRAPEZOID = "trapezoid"


@dataclass(frozen=True)
class QuadratureRule:
    kind: str
    points: np.ndarray  # (N, 2) abscissae inside the rectangle
    weights: np.ndarray  # (N,) weights summing to the rectangle area
    rect: tuple  # ((xlo, xhi), (ylo, yhi))

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    def integrate(self, values):
        """Integrate function values sampled at the rule's points.

        ``values`` may be (N,) or (N, K); the integral is taken over the
        leading axis.
        """
        return self.weights @ values


def make_quadrature(kind, rect, n_points=10_000):
    (xlo, xhi), (ylo, yhi) = rect
    area = (xhi - xlo) * (yhi - ylo)
    if not np.isfinite(area) or area <= 0.0:
        raise InvalidParameterError(f"degenerate integration rectangle {rect}")
    if n_points < 4:
        raise InvalidParameterError(f"n_points must be >= 4, got {n_points}")
    if kind == HALTON:
        pts01 = _accel.halton_points(n_points, 1)
        pts = np.empty_like(pts01)
        pts[:, 0] = xlo + (xhi - xlo) * pts01[:, 0]
        pts[:, 1] = ylo + (yhi - ylo) * pts01[:, 1]
        weights = np.full(n_points, area / n_points)
    elif kind == TRAPEZOID:
        g = max(2, int(round(np.sqrt(n_points))))
        xs = np.linspace(xlo, xhi, g)
        ys = np.linspace(ylo, yhi, g)
        wx = np.full(g, (xhi - xlo) / (g - 1))
        wx[0] *= 0.5
        wx[-1] *= 0.5
        wy = np.full(g, (yhi - ylo) / (g - 1))
        wy[0] *= 0.5
        wy[-1] *= 0.5
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        weights = np.outer(wx, wy).ravel()
    else:
        raise InvalidParameterError(f"unknown quadrature kind {kind!r}")
    return QuadratureRule(kind=kind, points=pts, weights=weights, rect=tuple(map(tuple, rect)))
