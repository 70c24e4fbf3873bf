"""Tensor-product spline bases, empirical centering, and the roughness penalty.

Tensor rows are flattened row-major with the first coordinate outermost:
entry ``k_a * K_b + k_b`` corresponds to basis function ``a_{k_a} * b_{k_b}``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError, InvalidSpecError
from .splines import SplineSpec, eval_basis, gram_matrix


@dataclass(frozen=True)
class TensorBasisSpec:
    """Spline specs for the treatment pair (T, S) and the rank pair (U, V)."""

    t: SplineSpec
    s: SplineSpec
    u: SplineSpec
    v: SplineSpec

    @property
    def K_TS(self):
        return self.t.K * self.s.K

    @property
    def K_UV(self):
        return self.u.K * self.v.K

    @property
    def K_TSUV(self):
        return self.K_TS * self.K_UV

    @classmethod
    def from_samples(cls, t, s, u, v, n_internal=2, degree=3):
        """Knots at empirical quantiles; unit-interval support for the ranks."""
        return cls(
            t=SplineSpec.from_quantiles(t, n_internal, degree),
            s=SplineSpec.from_quantiles(s, n_internal, degree),
            u=SplineSpec.from_quantiles(u, n_internal, degree, boundary=(0.0, 1.0)),
            v=SplineSpec.from_quantiles(v, n_internal, degree, boundary=(0.0, 1.0)),
        )


def tensor_eval(spec_a, spec_b, a, b):
    """Kronecker product of two univariate basis evaluations.

    Scalars give a (K_a*K_b,) vector; equal-length arrays give rows of the
    tensor design matrix, (m, K_a*K_b).
    """
    Ba = eval_basis(spec_a, a)
    Bb = eval_basis(spec_b, b)
    if Ba.ndim == 1:
        return np.kron(Ba, Bb)
    m = Ba.shape[0]
    return np.einsum("ij,ik->ijk", Ba, Bb).reshape(m, -1)


@dataclass(frozen=True)
class CenteredBasis:
    """Tensor basis over the rank pair, centered at an empirical mean.

    Evaluations return ``P_UV(u, v) - mean``, where ``mean`` is the sample
    average of the uncentered basis over the fitted control variables; the
    mean vector is retained because the marginal-integration step reuses it.
    """

    u_spec: SplineSpec
    v_spec: SplineSpec
    mean: np.ndarray

    def __post_init__(self):
        self.mean.setflags(write=False)

    @classmethod
    def from_sample(cls, u_spec, v_spec, u_hat, v_hat):
        u_hat = np.asarray(u_hat, dtype=np.float64)
        if u_hat.size == 0:
            raise InvalidParameterError("cannot center a basis on an empty sample")
        mean = tensor_eval(u_spec, v_spec, u_hat, v_hat).mean(axis=0)
        return cls(u_spec=u_spec, v_spec=v_spec, mean=mean)

    def eval(self, u, v):
        return tensor_eval(self.u_spec, self.v_spec, u, v) - self.mean


def roughness_2d(spec_a, spec_b):
    """Integrated squared second derivatives of a bivariate tensor basis.

    Sum of the (a''*b) and (a*b'') outer-product integrals over the support
    rectangle, a K_a*K_b square matrix.
    """
    R_a = gram_matrix(spec_a, deriv=2)
    G_a = gram_matrix(spec_a)
    R_b = gram_matrix(spec_b, deriv=2)
    G_b = gram_matrix(spec_b)
    return np.kron(R_a, G_b) + np.kron(G_a, R_b)


def penalty_matrix(spec, dx):
    """Block-diagonal roughness penalty for the stacked coefficient vector.

    One identical K_TS block per covariate coefficient vector, then a block
    for the product-term coefficients: the (T, S) roughness tensored with the
    identity over the rank directions plus the symmetric (U, V) counterpart.
    """
    if min(spec.t.degree, spec.s.degree, spec.u.degree, spec.v.degree) < 2:
        raise InvalidSpecError("roughness penalty needs spline degree >= 2")
    D_ts = roughness_2d(spec.t, spec.s)
    D_uv = roughness_2d(spec.u, spec.v)
    D_gl = np.kron(D_ts, np.eye(spec.K_UV)) + np.kron(np.eye(spec.K_TS), D_uv)
    D = scipy.linalg.block_diag(*([D_ts] * dx), D_gl)
    return 0.5 * (D + D.T)
