"""Gaussian linear-regression coefficients of increments on the pair ``(B_s, B_t)``.

Two bases are provided.  The value basis writes the conditional means as

    Z1 = l11 * B_s + l12 * B_t,        Z2 = l21 * B_s + l22 * B_t,

and is valid on both sides of the diagonal.  The increment basis, used on the
ordered simplex ``0 < s < t``, writes

    Z1 = e11 * B_s + e12 * B_{s,t},    Z2 = e21 * B_s + e22 * B_{s,t}.

Finite-scale coefficients (functions of ``eps``/``delta``) are the raw
regression weights; the limit coefficients are the ``eps, delta -> 0`` limits of
the finite ones divided by ``eps`` and ``delta`` respectively.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .covariance import (
    HurstModel,
    apow,
    check_off_diagonal,
    check_ordered,
    cov_r,
    d_func,
    dr_ds,
    dr_dt,
    phi,
    pow_increment,
    theta_det,
    variance_v,
    vartheta1,
)


class CoeffQuad(NamedTuple):
    c11: np.ndarray
    c12: np.ndarray
    c21: np.ndarray
    c22: np.ndarray

    def scaled(self, a, b) -> "CoeffQuad":
        """Divide the first row by ``a`` and the second row by ``b``."""
        return CoeffQuad(self.c11 / a, self.c12 / a, self.c21 / b, self.c22 / b)


def n_entries(m: HurstModel, eps, delta, s, t) -> CoeffQuad:
    """Covariances of ``(B_{s,s+eps}, B_{t,t+delta})`` with ``(B_s, B_t)``."""
    p = m.two_h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    delta = np.asarray(delta, dtype=float)
    # R(a+h, b) - R(a, b) = (|a+h|^p - |a|^p - |b-a-h|^p + |b-a|^p) / 2
    n11 = 0.5 * (pow_increment(s, eps, p) - apow(eps, p))
    n12 = 0.5 * (pow_increment(s, eps, p) - pow_increment(t - s, -eps, p))
    n21 = 0.5 * (pow_increment(t, delta, p) - pow_increment(s - t, -delta, p))
    n22 = 0.5 * (pow_increment(t, delta, p) - apow(delta, p))
    return CoeffQuad(n11, n12, n21, n22)


def o_entries(m: HurstModel, eps, delta, s, t) -> CoeffQuad:
    """Covariances of the increments with ``(B_s, B_{s,t})``, ordered simplex only."""
    check_ordered(s, t)
    p = m.two_h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    r = t - s
    o11 = 0.5 * apow(s, p) * vartheta1(m, eps / s)
    o12 = -0.5 * apow(r, p) * vartheta1(m, -eps / r)
    o21 = d_func(m, delta, s, t)
    o22 = 0.5 * apow(r, p) * vartheta1(m, delta / r)
    return CoeffQuad(o11, o12, o21, o22)


def lambda_finite(m: HurstModel, eps, delta, s, t) -> CoeffQuad:
    """Value-basis regression weights at scales ``(eps, delta)``."""
    check_off_diagonal(s, t)
    n = n_entries(m, eps, delta, s, t)
    vs, vt, r = variance_v(m, s), variance_v(m, t), cov_r(m, s, t)
    theta = theta_det(m, s, t)
    return CoeffQuad(
        (n.c11 * vt - n.c12 * r) / theta,
        (n.c12 * vs - n.c11 * r) / theta,
        (n.c21 * vt - n.c22 * r) / theta,
        (n.c22 * vs - n.c21 * r) / theta,
    )


def lambda_limit(m: HurstModel, s, t) -> CoeffQuad:
    """Limits ``lambda_ij(s,t)`` of ``lambda_finite / eps`` (resp. ``/ delta``)."""
    check_off_diagonal(s, t)
    h = m.h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    vs, vt, r = variance_v(m, s), variance_v(m, t), cov_r(m, s, t)
    half_dvs = h * apow(s, 2 * h - 1)
    half_dvt = h * apow(t, 2 * h - 1)
    rs = dr_ds(m, s, t)
    rt = dr_dt(m, s, t)
    theta = theta_det(m, s, t)
    return CoeffQuad(
        (half_dvs * vt - r * rs) / theta,
        (rs * vs - r * half_dvs) / theta,
        (rt * vt - r * half_dvt) / theta,
        (half_dvt * vs - r * rt) / theta,
    )


def eta_finite_unnormalized(m: HurstModel, eps, delta, s, t) -> CoeffQuad:
    """``Theta * eta_ij(eps|delta, s, t)`` written with ``vartheta1`` only."""
    check_ordered(s, t)
    p = m.two_h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    r = t - s
    s2h, r2h = apow(s, p), apow(r, p)
    ph = phi(m, s, t)
    a = 0.5 * s2h * vartheta1(m, eps / s)
    b = 0.5 * r2h * vartheta1(m, -eps / r)
    dd = d_func(m, delta, s, t)
    c = 0.5 * r2h * vartheta1(m, delta / r)
    return CoeffQuad(
        a * r2h + b * ph,
        -a * ph - b * s2h,
        dd * r2h - c * ph,
        -dd * ph + c * s2h,
    )


def eta_finite(m: HurstModel, eps, delta, s, t) -> CoeffQuad:
    """Increment-basis regression weights at scales ``(eps, delta)``."""
    u = eta_finite_unnormalized(m, eps, delta, s, t)
    theta = theta_det(m, s, t)
    return CoeffQuad(*(c / theta for c in u))


def eta_limit_unnormalized(m: HurstModel, s, t) -> CoeffQuad:
    check_ordered(s, t)
    h = m.h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    r = t - s
    ph = phi(m, s, t)
    s2h, r2h = apow(s, 2 * h), apow(r, 2 * h)
    s_1, r_1 = apow(s, 2 * h - 1), apow(r, 2 * h - 1)
    gap = -pow_increment(t, -s, 2 * h - 1)  # t^{2H-1} - (t-s)^{2H-1}
    return CoeffQuad(
        h * (s_1 * r2h - ph * r_1),
        h * (s2h * r_1 - s_1 * ph),
        h * (gap * r2h - ph * r_1),
        h * (s2h * r_1 - ph * gap),
    )


def eta_limit(m: HurstModel, s, t) -> CoeffQuad:
    u = eta_limit_unnormalized(m, s, t)
    theta = theta_det(m, s, t)
    return CoeffQuad(*(c / theta for c in u))
