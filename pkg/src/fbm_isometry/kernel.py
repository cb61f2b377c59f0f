"""Conditional cross-moment kernels given the pair ``(B_s, B_t)``.

Shapes: ``s`` and ``t`` broadcast against the leading (batch) axes of the
conditioning values ``b_s`` and ``b_t``, whose last axis has length ``d``.
Kernels are returned with two trailing axes ``(d, d)``, indexed ``[i, j]``
with ``i`` the coordinate of the increment at ``s`` and ``j`` the coordinate
of the increment at ``t``.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .covariance import (
    HurstModel,
    apow,
    check_off_diagonal,
    check_ordered,
    cov_r,
    cross_increment_cov,
    d2r_dsdt,
    phi,
    phi_det,
    variance_v,
)
from .regression import CoeffQuad, eta_limit, lambda_finite, lambda_limit


class PairSample(NamedTuple):
    b_s: np.ndarray
    b_t: np.ndarray


def _prep(s, t, b_s, b_t):
    b_s = np.asarray(b_s, dtype=float)
    b_t = np.asarray(b_t, dtype=float)
    if b_s.ndim == 0:
        b_s = b_s[None]
    if b_t.ndim == 0:
        b_t = b_t[None]
    s = np.asarray(s, dtype=float)[..., None, None]
    t = np.asarray(t, dtype=float)[..., None, None]
    return s, t, b_s, b_t


def _second_chaos(c: CoeffQuad, s, t, b_s, b_t, m: HurstModel):
    """Centered product ``(c11 X_s + c12 X_t)^i (c21 X_s + c22 X_t)^j - mean``."""
    eye = np.eye(b_s.shape[-1])
    z1 = c.c11[..., None] * b_s + c.c12[..., None] * b_t
    z2 = c.c21[..., None] * b_s + c.c22[..., None] * b_t
    s_, t_ = s[..., 0, 0], t[..., 0, 0]
    mean = (
        c.c11 * c.c21 * variance_v(m, s_)
        + (c.c11 * c.c22 + c.c12 * c.c21) * cov_r(m, s_, t_)
        + c.c12 * c.c22 * variance_v(m, t_)
    )
    return z1[..., :, None] * z2[..., None, :] - mean[..., None, None] * eye


def w_kernel(m: HurstModel, s, t, b_s, b_t):
    """Centered second-order polynomial ``W(s,t)`` in the conditioning values."""
    check_off_diagonal(s, t)
    s4, t4, b_s, b_t = _prep(s, t, b_s, b_t)
    c = lambda_limit(m, s, t)
    return _second_chaos(c, s4, t4, b_s, b_t, m)


def w_kernel_increment(m: HurstModel, s, t, b_s, b_t):
    """``W(s,t)`` assembled in the increment basis (one simplex at a time).

    For ``s < t`` the regressors are ``(B_s, B_{s,t})``.  For ``t < s`` the
    roles of the two times are swapped and the result transposed.
    """
    check_off_diagonal(s, t)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    b_s = np.asarray(b_s, dtype=float)
    b_t = np.asarray(b_t, dtype=float)
    if np.all(s < t):
        return _w_increment_ordered(m, s, t, b_s, b_t)
    if np.all(t < s):
        return np.swapaxes(_w_increment_ordered(m, t, s, b_t, b_s), -1, -2)
    raise ValueError("w_kernel_increment expects all points on the same simplex")


def _w_increment_ordered(m, s, t, b_s, b_t):
    check_ordered(s, t)
    e = eta_limit(m, s, t)
    inc = b_t - b_s
    z1 = e.c11[..., None] * b_s + e.c12[..., None] * inc
    z2 = e.c21[..., None] * b_s + e.c22[..., None] * inc
    ph = phi(m, s, t)
    mean = (
        e.c11 * e.c21 * variance_v(m, s)
        + (e.c11 * e.c22 + e.c12 * e.c21) * ph
        + e.c12 * e.c22 * apow(t - s, m.two_h)
    )
    eye = np.eye(b_s.shape[-1])
    return z1[..., :, None] * z2[..., None, :] - mean[..., None, None] * eye


def lambda_kernel(m: HurstModel, s, t, b_s, b_t):
    """Limit kernel ``Lambda(s,t) = W(s,t) + H(2H-1)|t-s|^{2H-2} I``."""
    w = w_kernel(m, s, t, b_s, b_t)
    dd = d2r_dsdt(m, s, t)
    return w + np.asarray(dd)[..., None, None] * np.eye(w.shape[-1])


def det_cross(m: HurstModel, eps, delta, s, t):
    """``E[B_{s,s+eps} B_{t,t+delta}] / (eps delta)`` on the ordered simplex.

    Uses the one-variable representation through ``Phi``; the general-order
    version is :func:`det_cross_any`.
    """
    check_ordered(s, t)
    r = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    eps = np.asarray(eps, dtype=float)
    delta = np.asarray(delta, dtype=float)
    return apow(r, m.two_h) / (2 * eps * delta) * phi_det(m, delta / r, eps / r)


def det_cross_any(m: HurstModel, eps, delta, s, t):
    """Cancellation-free ``E[B_{s,s+eps} B_{t,t+delta}] / (eps delta)``, any order."""
    return cross_increment_cov(m, eps, delta, s, t) / (np.asarray(eps) * np.asarray(delta))


def lambda_kernel_finite(m: HurstModel, eps, delta, s, t, b_s, b_t):
    """Finite-scale kernel ``E[B_{s,s+eps} (x) B_{t,t+delta} | B_s, B_t] / (eps delta)``."""
    check_off_diagonal(s, t)
    if np.any(np.maximum(eps, delta) >= np.abs(np.asarray(t) - np.asarray(s))):
        warnings.warn(
            "increment windows overlap |t-s|; deterministic term is in its overlap regime",
            RuntimeWarning,
            stacklevel=2,
        )
    return _lambda_kernel_finite(m, eps, delta, s, t, b_s, b_t)


def _lambda_kernel_finite(m, eps, delta, s, t, b_s, b_t):
    s4, t4, b_s, b_t = _prep(s, t, b_s, b_t)
    c = lambda_finite(m, eps, delta, s, t)
    eps = np.asarray(eps, dtype=float)
    delta = np.asarray(delta, dtype=float)
    c = c.scaled(eps, delta)
    rand = _second_chaos(c, s4, t4, b_s, b_t, m)
    det = det_cross_any(m, eps, delta, s, t)
    return rand + np.asarray(det)[..., None, None] * np.eye(rand.shape[-1])
