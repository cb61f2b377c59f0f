"""Exact second moment of forward integrals driven by fractional Brownian motion.

The second moment of the forward integral of ``Y_t = g(t, B_t)`` equals the
double integral of ``E<Y_s (x) Y_t, Lambda(s,t)>``, where ``Lambda`` is an
explicit kernel in ``(B_s, B_t)``.  The package evaluates ``Lambda`` and its
finite-scale version, computes the double integral by quadrature, and checks
it against Monte Carlo estimates of the forward integral.
"""

from .covariance import DomainError, HurstModel, SimplexPoint, cov_r, d2r_dsdt, theta_det, variance_v
from .forward import EstimateWithCI, Integrand, forward_approx, make_integrand, second_moment, second_moment_ladder
from .kernel import PairSample, det_cross, lambda_kernel, lambda_kernel_finite, w_kernel
from .quadrature import QuadratureSpec, lq_distance_finite_to_limit, lq_norm_lambda, pointwise_F, rhs_isometry
from .regression import CoeffQuad, eta_finite, eta_limit, lambda_finite, lambda_limit
from .sampling import FbmPath, sample_pair, sample_path_cholesky, sample_path_circulant

__all__ = [
    "CoeffQuad", "DomainError", "EstimateWithCI", "FbmPath", "HurstModel", "Integrand", "PairSample",
    "QuadratureSpec", "SimplexPoint", "cov_r", "d2r_dsdt", "det_cross", "eta_finite", "eta_limit",
    "forward_approx", "lambda_finite", "lambda_kernel", "lambda_kernel_finite", "lambda_limit",
    "lq_distance_finite_to_limit", "lq_norm_lambda", "make_integrand", "pointwise_F", "rhs_isometry",
    "sample_pair", "sample_path_cholesky", "sample_path_circulant", "second_moment",
    "second_moment_ladder", "theta_det", "variance_v", "w_kernel",
]
