"""Ratios of quantities to their proved upper envelopes.

Every function returns ``|quantity| / envelope`` so a bound with constant
``C`` holds at a sample exactly when the ratio is at most ``C``.  Explicit
constants are exposed as functions of ``H``; the implicit ones are measured by
dense sampling and frozen (see :mod:`fbm_isometry.constants`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import HurstModel, a_factor, apow, d_func, phi_det, theta_det, vartheta1
from .regression import eta_finite


def vartheta1_ratio(m: HurstModel, x):
    """``|vartheta1(x)| / (4H|x|)``; at most 1 everywhere."""
    x = np.asarray(x, dtype=float)
    return np.abs(vartheta1(m, x)) / (4 * m.h * np.abs(x))


def fh_constant(m: HurstModel) -> float:
    return 2 ** (2 - m.two_h) / (4 - 2**m.two_h)


def fh_ratio(m: HurstModel, s, t):
    """``(s^{2H} min t^{2H}) / |A(s,t)|`` divided by its explicit bound."""
    lo = apow(np.minimum(s, t), m.two_h)
    return lo / np.abs(a_factor(m, s, t)) / fh_constant(m)


def determinant_identity_error(m: HurstModel, s, t):
    """Relative gap between ``theta_det`` and ``|t-s|^{2H} A(s,t)``."""
    lhs = theta_det(m, s, t)
    rhs = apow(np.abs(np.asarray(t) - np.asarray(s)), m.two_h) * a_factor(m, s, t)
    return np.abs(lhs - rhs) / np.abs(rhs)


def in_q_region(x, y):
    """Membership in ``{x, y > 0, min(x, y) < 1}``."""
    x = np.asarray(x)
    y = np.asarray(y)
    return (x > 0) & (y > 0) & (np.minimum(x, y) < 1)


def grdet_ratio(m: HurstModel, x, y):
    """``|Phi(x, y) / (x y)|`` on the region of :func:`in_q_region`."""
    if not np.all(in_q_region(x, y)):
        raise ValueError("points outside the region")
    return np.abs(phi_det(m, x, y) / (np.asarray(x) * np.asarray(y)))


def d_ratio(m: HurstModel, delta, s, t):
    """``|d(delta,s,t)| / (delta s (1/t + 1))``."""
    delta, s, t = (np.asarray(a, dtype=float) for a in (delta, s, t))
    return np.abs(d_func(m, delta, s, t)) / (delta * s * (1 / t + 1))


def _eta_products(m, eps, delta, s, t):
    e1 = eta_finite(m, eps, delta, s, t)
    # rows of eta carry eps (first) and delta (second)
    return e1, eps * delta


def envelope_t1(m, s, t):
    h = m.h
    r = t - s
    return 1 / t + apow(s, h - 1) * apow(r, h - 1) + apow(s, 1 - 2 * h) * (apow(t, 2 * h - 2) + 1) + apow(r, 2 * h - 2)


def envelope_t2(m, s, t):
    return envelope_t1(m, s, t) + 1.0


def envelope_mixed(m, s, t):
    h = m.h
    r = t - s
    return (apow(s, h - 1) * apow(r, h - 1) + apow(r, 2 * h - 2) + (1 / t + 1)
            + apow(r, h - 1) * (1 + apow(t, -h)))


def eta_product_ratios(m: HurstModel, eps, delta, s, t) -> dict[str, np.ndarray]:
    """The four rescaled eta products divided by their envelopes."""
    eps, delta, s, t = (np.asarray(a, dtype=float) for a in (eps, delta, s, t))
    e, scale = _eta_products(m, eps, delta, s, t)
    r = t - s
    p = m.two_h
    sr = apow(s, m.h) * apow(r, m.h)
    return {
        "eta12_eta22": np.abs(e.c12 * e.c22) * apow(r, p) / scale / envelope_t1(m, s, t),
        "eta11_eta21": np.abs(e.c11 * e.c21) * apow(s, p) / scale / envelope_t2(m, s, t),
        "eta11_eta22": np.abs(e.c11 * e.c22) * sr / scale / envelope_mixed(m, s, t),
        "eta12_eta21": np.abs(e.c12 * e.c21) * sr / scale / envelope_mixed(m, s, t),
    }


def west_envelope(m: HurstModel, s, t):
    """``|t-s|^{2H-2} + (s min t)^{H-1}|t-s|^{H-1}``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    r = np.abs(t - s)
    return apow(r, 2 * m.h - 2) + apow(np.minimum(s, t), m.h - 1) * apow(r, m.h - 1)


@dataclass(frozen=True)
class SimplexSample:
    """Random points of the ordered simplex and scales, log-uniform toward its edges."""

    eps: np.ndarray
    delta: np.ndarray
    s: np.ndarray
    t: np.ndarray


def sample_simplex(rng: np.random.Generator, n: int, T: float = 1.0, low: float = 1e-6) -> SimplexSample:
    """``s`` and ``t - s`` are log-uniform so the axis and the diagonal are both reached."""
    lg = np.log10(low)
    s = T * 10 ** rng.uniform(lg, 0, n)
    r = (T - s) * 10 ** rng.uniform(lg, 0, n)
    r = np.maximum(r, 1e-9 * T)
    s = np.minimum(s, T - r)
    eps = 10 ** rng.uniform(-6, 0, n)
    delta = 10 ** rng.uniform(-6, 0, n)
    return SimplexSample(eps, delta, s, s + r)


def sample_q_region(rng: np.random.Generator, n: int, high: float = 1e3):
    """Points of the region with one coordinate in ``(0,1)``, the other log-uniform up to ``high``."""
    small = 10 ** rng.uniform(-6, 0, n)
    other = 10 ** rng.uniform(-6, np.log10(high), n)
    flip = rng.random(n) < 0.5
    return np.where(flip, small, other), np.where(flip, other, small)
