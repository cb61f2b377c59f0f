"""Closed-form covariance quantities of a d-dimensional fractional Brownian motion.

Every function is vectorised over numpy broadcasting in its time arguments.
Functions whose value is only defined off the diagonal (or on the ordered
simplex ``0 < s < t``) raise :class:`DomainError` when any input violates
that requirement, rather than returning ``inf``/``nan``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Relative distance below which ``s`` and ``t`` are treated as equal.
DIAGONAL_RTOL = 1e-12


def on_diagonal(s, t):
    """True where ``|t - s|`` lies in the rejected band around ``s = t``.

    The band is ``DIAGONAL_RTOL * max(1, s, t)`` widened by a few ulps so a
    separation of exactly ``1e-12`` written as ``t - 1e-12`` is caught
    despite rounding in the subtraction.
    """
    top = np.maximum(np.abs(s), np.abs(t))
    band = DIAGONAL_RTOL * np.maximum(top, 1.0) + 64 * np.finfo(float).eps * top
    return np.abs(t - s) <= band


class DomainError(ValueError):
    """Raised when a kernel is evaluated outside its domain of definition."""


@dataclass(frozen=True)
class HurstModel:
    """Hurst exponent ``h`` in the open interval (1/2, 1) and dimension ``d``."""

    h: float
    d: int = 1

    def __post_init__(self):
        if not (0.5 < self.h < 1.0):
            raise ValueError(f"Hurst exponent must satisfy 1/2 < h < 1, got {self.h}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")

    @property
    def two_h(self) -> float:
        return 2.0 * self.h

    @property
    def q_max(self) -> float:
        """Upper end of the convergence range ``min{1/(2h-1), 1/(2-2h)}``."""
        return min(1.0 / (2.0 * self.h - 1.0), 1.0 / (2.0 - 2.0 * self.h))


@dataclass(frozen=True)
class SimplexPoint:
    """Off-diagonal time pair with both coordinates strictly positive."""

    s: float
    t: float

    def __post_init__(self):
        check_off_diagonal(self.s, self.t)

    @property
    def ordered(self) -> bool:
        return self.s < self.t


def apow(x, p):
    """``|x|**p`` with an explicit zero branch (``0**p = 0`` for ``p > 0``)."""
    x = np.abs(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        out = np.exp(p * np.log(np.where(x > 0, x, 1.0)))
    return np.where(x > 0, out, 0.0 if p > 0 else np.inf)


def pow_increment(a, h, p):
    """``|a + h|**p - |a|**p`` without cancellation when ``|h| << |a|``."""
    a = np.asarray(a, dtype=float)
    h = np.asarray(h, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(a != 0, h / np.where(a != 0, a, 1.0), np.inf)
        small = np.abs(x) < 0.5
        stable = apow(a, p) * np.expm1(p * np.log1p(np.where(small, x, 0.0)))
    return np.where(small, stable, apow(a + h, p) - apow(a, p))


def check_off_diagonal(s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s <= 0) or np.any(t <= 0):
        raise DomainError("kernel requires s > 0 and t > 0")
    if np.any(on_diagonal(s, t)):
        raise DomainError("kernel is undefined on the diagonal s = t")


def check_ordered(s, t):
    check_off_diagonal(s, t)
    if np.any(np.asarray(s) >= np.asarray(t)):
        raise DomainError("function is defined on the ordered simplex 0 < s < t only")


def cov_r(m: HurstModel, s, t):
    """Covariance ``R(s,t) = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`` of one coordinate."""
    p = m.two_h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("covariance is defined for nonnegative times")
    return 0.5 * (apow(t, p) + apow(s, p) - apow(t - s, p))


def variance_v(m: HurstModel, s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("variance is defined for nonnegative times")
    return apow(s, m.two_h)


def phi(m: HurstModel, s, t):
    """``R(s,t) - v(s)`` on the ordered simplex; strictly positive there."""
    check_ordered(s, t)
    p = m.two_h
    # R(s,t) - s^{2H} = ((t^{2H} - (t-s)^{2H}) - s^{2H}) / 2
    return 0.5 * (-pow_increment(t, -np.asarray(s, float), p) - apow(s, p))


def dr_ds(m: HurstModel, s, t):
    """Partial derivative of ``R`` in its first argument."""
    check_off_diagonal(s, t)
    h = m.h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return h * apow(s, 2 * h - 1) + h * np.sign(t - s) * apow(t - s, 2 * h - 1)


def dr_dt(m: HurstModel, s, t):
    """Partial derivative of ``R`` in its second argument."""
    return dr_ds(m, t, s)


def d2r_dsdt(m: HurstModel, s, t):
    """Mixed partial ``H(2H-1)|t-s|^{2H-2}``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t - s) <= DIAGONAL_RTOL * np.maximum(np.maximum(s, t), 1e-300)):
        raise DomainError("mixed partial diverges on the diagonal")
    h = m.h
    return h * (2 * h - 1) * apow(t - s, 2 * h - 2)


def theta_det(m: HurstModel, s, t):
    """Determinant ``v(s)v(t) - R(s,t)^2`` of the per-coordinate pair covariance."""
    check_off_diagonal(s, t)
    # (sqrt(v_s v_t) - R)(sqrt(v_s v_t) + R) with the first factor written as
    # (|t-s|^{2H} - (t^H - s^H)^2) / 2, which avoids cancellation near s = t
    h = m.h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    r = hi - lo
    # |t-s|^{2H} - (t^H - s^H)^2 = (r^H - hi^H + lo^H)(r^H + hi^H - lo^H); the
    # first factor is formed from whichever increment is small
    small = np.where(
        lo < r,
        apow(lo, h) - pow_increment(r, lo, h),
        apow(r, h) - pow_increment(lo, r, h),
    )
    large = apow(r, h) + pow_increment(lo, r, h)
    gap = 0.5 * small * large
    return gap * (apow(s * t, h) + cov_r(m, s, t))


def a_factor(m: HurstModel, s, t):
    """``A(s,t)`` such that ``theta_det = |t-s|^{2H} A(s,t)``."""
    check_off_diagonal(s, t)
    p = m.two_h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    r = apow(hi - lo, p)
    # expanding (t^p - s^p)^2 around |t-s|^p leaves a form without the
    # cancellation the textbook expression suffers when s or t is small
    inner = pow_increment(lo, hi - lo, p) - r
    return apow(lo, p) - 0.25 * inner**2 / r


def vartheta1(m: HurstModel, x):
    p = m.two_h
    x = np.asarray(x, dtype=float)
    return pow_increment(1.0, x, p) - apow(x, p)


def vartheta2(m: HurstModel, x):
    return pow_increment(1.0, np.asarray(x, dtype=float), m.two_h)


def phi_det(m: HurstModel, x, y):
    """``Phi(x,y) = |1+x|^{2H} - |1+x-y|^{2H} - 1 + |1-y|^{2H}``."""
    p = m.two_h
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return apow(1 + x, p) - apow(1 + x - y, p) - 1.0 + apow(1 - y, p)


def d_func(m: HurstModel, delta, s, t):
    """``t^{2H}/2 * vartheta1(delta/t) - |t-s|^{2H}/2 * vartheta1(delta/(t-s))``."""
    check_ordered(s, t)
    p = m.two_h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    r = t - s
    return 0.5 * apow(t, p) * vartheta1(m, delta / t) - 0.5 * apow(r, p) * vartheta1(m, delta / r)


def cross_increment_cov(m: HurstModel, eps, delta, s, t):
    """``E[B_{s,s+eps} B_{t,t+delta}]`` for one coordinate, any ordering of ``s, t``.

    Equals ``(|t-s-eps|^{2H} + |t-s+delta|^{2H} - |t-s+delta-eps|^{2H} - |t-s|^{2H}) / 2``,
    a second difference of ``|x|^{2H}``.  Writing it as a double integral of
    the second derivative and integrating one direction in closed form leaves
    a one-dimensional integral that is analytic whenever a window stays
    clear of the singularity; Gauss-Legendre then gives full relative
    accuracy however small ``eps`` or ``delta`` is.  Overlapping or touching
    windows use the difference form, which has no small scale to lose.
    """
    p = m.two_h
    eps, delta, s, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (eps, delta, s, t)))
    r = t - s
    # symmetric under (eps, s) <-> (delta, t): put the earlier window first
    flip = r < 0
    first = np.where(flip, delta, eps)
    second = np.where(flip, eps, delta)
    r = np.abs(r)
    out = np.array(0.5 * (pow_increment(r, -first, p) - pow_increment(r + second, -first, p)), dtype=float)
    x, w = _GL_NODES
    # H int_0^first [(r-a+second)^{2H-1} - (r-a)^{2H-1}] da, clear of a = r
    along_first = (r > 0) & (first <= 0.5 * r)
    if np.any(along_first):
        f, g, rr = first[along_first], second[along_first], r[along_first]
        a = 0.5 * f[..., None] * (x + 1)
        inner = pow_increment(rr[..., None] - a, g[..., None], p - 1)
        out[along_first] = m.h * 0.5 * f * (inner @ w)
    # H int_0^second [(r+b)^{2H-1} - sgn(r+b-first)|r+b-first|^{2H-1}] db
    along_second = (r > 0) & ~along_first & (second <= 0.5 * np.abs(r - first))
    if np.any(along_second):
        f, g, rr = first[along_second], second[along_second], r[along_second]
        b = rr[..., None] + 0.5 * g[..., None] * (x + 1)
        lag = b - f[..., None]
        inner = apow(b, p - 1) - np.sign(lag) * apow(lag, p - 1)
        out[along_second] = m.h * 0.5 * g * (inner @ w)
    return out[()] if out.ndim == 0 else out


_GL_NODES = np.polynomial.legendre.leggauss(16)
