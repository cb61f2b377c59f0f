"""Forward-integral approximations and Monte Carlo second moments.

The forward approximation of ``int_0^T <g(s, B_s), d^- B_s>`` at scale
``eps`` is ``(1/eps) int_0^T <g(s,B_s), B_{s+eps} - B_s> ds``; the time
integral is discretised on the sampling grid.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .covariance import HurstModel
from .sampling import CHUNK, FbmPath, sample_path_cholesky, sample_path_circulant

log = logging.getLogger(__name__)

JACKKNIFE_BLOCK = 100


@dataclass(frozen=True)
class Integrand:
    """State-dependent integrand ``Y_t = g(t, B_t)``.

    ``func(t, x)`` receives ``t`` broadcastable against ``x[..., 0]`` and
    ``x`` of shape ``(..., d)``; it returns an array of the same shape as
    ``x``.  ``elementwise`` declares that output coordinate ``i`` depends on
    ``x[..., i]`` only, which the quadrature layer exploits.
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str
    params: dict = field(default_factory=dict)
    elementwise: bool = True
    polynomial_degree: int | None = None

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.func(np.asarray(t, dtype=float), x), x.shape)

    def describe(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"


def constant(c) -> Integrand:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return Integrand(
        lambda t, x: np.broadcast_to(c, x.shape), "constant",
        {"c": c.tolist()}, True, 0,
    )


def identity() -> Integrand:
    return Integrand(lambda t, x: x, "identity", {}, True, 1)


def sign() -> Integrand:
    return Integrand(lambda t, x: np.sign(x), "sign", {}, True, None)


def power(a: float) -> Integrand:
    """``g(x) = sgn(x)|x|^a`` componentwise."""
    return Integrand(lambda t, x: np.sign(x) * np.abs(x) ** a, "power", {"a": a}, True, None)


def zero() -> Integrand:
    return Integrand(lambda t, x: np.zeros_like(x), "zero", {}, True, 0)


def make_integrand(spec: str) -> Integrand:
    """Parse ``"constant:1,2"``, ``"identity"``, ``"sign"`` or ``"power:0.5"``."""
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name == "constant":
        return constant([float(v) for v in arg.split(",")] if arg else [1.0])
    if name in ("identity", "b"):
        return identity()
    if name == "sign":
        return sign()
    if name == "power":
        return power(float(arg))
    if name == "zero":
        return zero()
    raise ValueError(f"unknown integrand {spec!r}")


@dataclass(frozen=True)
class EstimateWithCI:
    value: float
    std_error: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("standard error must be nonnegative")
        if self.n_samples < 2:
            raise ValueError("need at least two samples")

    def within(self, target: float, k: float = 4.0) -> bool:
        return abs(self.value - target) <= k * self.std_error


def snap_eps(eps: float, dt: float) -> int:
    """Number of grid steps representing ``eps``; logs when snapping is needed."""
    k = int(round(eps / dt))
    if abs(k * dt - eps) > 1e-9 * eps:
        log.info("eps=%.6g snapped to %d grid steps (%.6g)", eps, k, k * dt)
    if k < 2:
        raise ValueError(f"grid too coarse: eps={eps} needs at least 2 steps of dt={dt}")
    return k


def _time_weights(n_t: int, dt: float, rule: str) -> np.ndarray:
    if rule == "trapezoid":
        w = np.full(n_t + 1, dt)
        w[0] = w[-1] = 0.5 * dt
    elif rule == "left":
        w = np.full(n_t + 1, dt)
        w[-1] = 0.0
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return w


def forward_ladder(path: FbmPath, y: Integrand, eps_ladder: Sequence[float], T: float,
                   rule: str = "trapezoid") -> np.ndarray:
    """Forward approximations at several scales; shape ``(n_paths, len(eps_ladder))``.

    ``g(s, B_s)`` is evaluated once and shared by every scale.
    """
    dt = path.dt
    ks = [snap_eps(e, dt) for e in eps_ladder]
    n_t = int(round(T / dt))
    if abs(n_t * dt - T) > 1e-9 * T:
        raise ValueError("T must be a multiple of the grid step")
    if n_t + max(ks) > len(path.grid) - 1:
        raise ValueError("path grid does not cover [0, T + eps]")
    b = path.values
    x = b[:, : n_t + 1, :]
    w = _time_weights(n_t, dt, rule)
    gw = y(path.grid[: n_t + 1, None], x) * w[None, :, None]
    base = np.einsum("pnd,pnd->p", gw, x)
    out = np.empty((b.shape[0], len(ks)))
    for j, k in enumerate(ks):
        out[:, j] = (np.einsum("pnd,pnd->p", gw, b[:, k : n_t + 1 + k, :]) - base) / (k * dt)
    return out


def forward_approx(path: FbmPath, y: Integrand, eps: float, T: float, rule: str = "trapezoid"):
    """Forward approximation for every path in ``path``; returns shape ``(n_paths,)``."""
    return forward_ladder(path, y, [eps], T, rule)[:, 0]


def riemann_sum(path: FbmPath, y: Integrand, partition):
    """Left-point Riemann sum over ``partition`` (a subset of the path grid)."""
    partition = np.asarray(partition, dtype=float)
    idx = np.searchsorted(path.grid, partition)
    idx = np.clip(idx, 0, len(path.grid) - 1)
    if np.any(np.abs(path.grid[idx] - partition) > 1e-12 * max(1.0, partition.max())):
        raise ValueError("partition is not a subset of the path grid")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("partition must be strictly increasing")
    b = path.values[:, idx, :]
    gx = y(partition[:-1, None], b[:, :-1, :])
    return np.sum(gx * np.diff(b, axis=1), axis=(1, 2))


def jackknife(samples: np.ndarray, stat: Callable[[np.ndarray], float], block: int = JACKKNIFE_BLOCK):
    """Blockwise leave-one-out jackknife; ``samples`` has paths on axis 0.

    Returns ``(estimate, standard_error)``.
    """
    n = samples.shape[0]
    nb = n // block
    if nb < 2:
        raise ValueError("need at least two jackknife blocks")
    used = samples[: nb * block]
    sums = used.reshape(nb, block, *used.shape[1:]).sum(axis=1)
    total = sums.sum(axis=0)
    full = stat(total / (nb * block))
    loo = np.array([stat((total - sums[i]) / ((nb - 1) * block)) for i in range(nb)])
    se = np.sqrt((nb - 1) / nb * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, se


@dataclass
class LadderResult:
    """Second moments along a decreasing eps ladder plus an extrapolated value."""

    eps: list[float]
    estimates: list[EstimateWithCI]
    extrapolated: EstimateWithCI
    order: float


def _richardson(means: np.ndarray, order: float | None):
    """Extrapolate the last three ladder values (ratio-2 ladder) to eps = 0.

    With ``order=None`` the order is estimated from the three finest values.
    """
    m1, m2, m3 = means[-3], means[-2], means[-1]
    if order is None:
        d1, d2 = m1 - m2, m2 - m3
        if d1 * d2 <= 0 or d2 == 0:
            return m3, np.nan
        order = float(np.log2(d1 / d2))
        order = min(max(order, 0.1), 4.0)
    return m3 - (m2 - m3) / (2.0**order - 1.0), order


def _path_batch(m, sampler, n_steps, dt, seed, n_paths, grid):
    if sampler == "circulant":
        return sample_path_circulant(m, n_steps, dt, seed, n_paths)
    if sampler == "cholesky":
        return sample_path_cholesky(m, grid, seed, n_paths)
    raise ValueError(f"unknown sampler {sampler!r}")


def forward_samples(
    m: HurstModel,
    y: Integrand,
    eps_ladder: Sequence[float],
    T: float,
    n_paths: int,
    seed: int,
    sampler: str = "circulant",
    dt: float | None = None,
    rule: str = "trapezoid",
    workers: int = 1,
) -> np.ndarray:
    """``I^-(eps)`` for each path and each eps; shape ``(n_paths, len(eps_ladder))``.

    Paths are generated in fixed chunks; chunk ``k`` uses its own substream of
    ``seed`` so results do not depend on ``workers``.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    if dt is None:
        dt = min(eps_ladder) / 2.0
    n_steps = int(np.ceil((T + max(eps_ladder)) / dt - 1e-9))
    grid = dt * np.arange(n_steps + 1)

    def run(job):
        k, a, b = job
        # substream index k of the master seed, shared by both samplers
        chunk_seed = int(np.random.SeedSequence(int(seed), spawn_key=(k,)).generate_state(1)[0])
        path = _path_batch(m, sampler, n_steps, dt, chunk_seed, b - a, grid)
        return forward_ladder(path, y, eps_ladder, T, rule)

    jobs = [(k, a, min(n_paths, a + CHUNK)) for k, a in enumerate(range(0, n_paths, CHUNK))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    return np.concatenate(parts, axis=0)


def second_moment(
    m: HurstModel,
    y: Integrand,
    eps: float,
    T: float,
    n_paths: int,
    seed: int,
    sampler: str = "circulant",
    **kw,
) -> EstimateWithCI:
    """Monte Carlo estimate of ``E[I^-(eps)^2]`` with a jackknife standard error."""
    if n_paths < 1000:
        raise ValueError("second_moment needs at least 1000 paths")
    vals = forward_samples(m, y, [eps], T, n_paths, seed, sampler, **kw)[:, 0]
    est, se = jackknife(vals**2, lambda mean: mean)
    return EstimateWithCI(float(est), float(se), n_paths, seed)


def second_moment_ladder(
    m: HurstModel,
    y: Integrand,
    eps_ladder: Sequence[float],
    T: float,
    n_paths: int,
    seed: int,
    sampler: str = "circulant",
    order: float | None = None,
    **kw,
) -> LadderResult:
    """Second moments on a ratio-2 eps ladder sharing the same paths.

    The extrapolated value applies one Richardson step to the three finest
    levels; its standard error comes from the same blockwise jackknife, so
    the correlation between levels is accounted for.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    if len(eps_ladder) < 3 or np.any(np.diff(eps_ladder) >= 0):
        raise ValueError("eps ladder must be strictly decreasing with at least 3 levels")
    ratios = np.array(eps_ladder[:-1]) / np.array(eps_ladder[1:])
    if not np.allclose(ratios[-2:], 2.0):
        raise ValueError("the three finest ladder levels must have ratio 2")
    vals = forward_samples(m, y, eps_ladder, T, n_paths, seed, sampler, **kw)
    sq = vals**2
    means, ses = jackknife(sq, lambda mean: mean)
    ests = [EstimateWithCI(float(a), float(b), n_paths, seed) for a, b in zip(means, ses)]
    _, fitted_order = _richardson(means, order)
    fallback = fitted_order if np.isfinite(fitted_order) else 1.0

    def extrapolate(mean):
        # the order is re-fitted in every replicate so its uncertainty enters the SE
        value, fitted = _richardson(mean, order)
        if not np.isfinite(fitted):
            value, _ = _richardson(mean, fallback)
        return value

    ext, ext_se = jackknife(sq, extrapolate)
    return LadderResult(
        eps_ladder, ests, EstimateWithCI(float(ext), float(ext_se), n_paths, seed), float(fitted_order)
    )
