"""Exact-law samplers for fBm paths and for the pair ``(B_s, B_t)``.

Randomness comes from counter-based Philox streams.  A master seed is
expanded with :class:`numpy.random.SeedSequence` into one child stream per
chunk of paths, so the output depends only on ``(seed, chunk index)`` and
never on how chunks are scheduled across workers.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .covariance import HurstModel, check_off_diagonal, cov_r, variance_v
from .kernel import PairSample

log = logging.getLogger(__name__)

#: Paths per RNG substream; part of the reproducibility contract.
CHUNK = 2048


class SamplerError(RuntimeError):
    pass


@dataclass
class FbmPath:
    """Sampled paths on a common grid.

    ``values`` has shape ``(n_paths, len(grid), d)`` with ``values[:, 0] == 0``.
    """

    grid: np.ndarray
    values: np.ndarray
    seed: int
    h: float

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        steps = np.diff(self.grid)
        if not np.allclose(steps, steps[0], rtol=1e-10, atol=0):
            raise ValueError("grid is not uniform")
        return float(steps[0])


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent Philox generator for chunk ``index`` of master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _chunks(n: int, chunk: int = CHUNK):
    start = 0
    while start < n:
        yield start, min(n, start + chunk)
        start += chunk


def _cholesky_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.max(np.diag(cov)))
        log.warning("Cholesky failed; retrying with diagonal jitter %.3g", jitter)
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise SamplerError("covariance is not positive definite even with jitter") from exc


def path_covariance(m: HurstModel, grid: np.ndarray) -> np.ndarray:
    tt = np.asarray(grid, dtype=float)
    return cov_r(m, tt[:, None], tt[None, :])


def sample_path_cholesky(m: HurstModel, grid, seed: int, n_paths: int = 1) -> FbmPath:
    """Reference sampler: dense Cholesky factor of the grid covariance."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and start at 0")
    if len(grid) > 4097:
        raise ValueError("dense factorization budget exceeded (at most 4096 steps)")
    lower = _cholesky_factor(path_covariance(m, grid[1:]))
    values = np.zeros((n_paths, len(grid), m.d))
    for k, (a, b) in enumerate(_chunks(n_paths)):
        z = substream(seed, k).standard_normal((b - a, m.d, len(grid) - 1))
        values[a:b, 1:, :] = np.einsum("ij,pdj->pid", lower, z)
    return FbmPath(grid, values, seed, m.h)


def fgn_autocovariance(h: float, n: int) -> np.ndarray:
    k = np.arange(n + 1, dtype=float)
    p = 2 * h
    return 0.5 * (np.abs(k + 1) ** p - 2 * np.abs(k) ** p + np.abs(k - 1) ** p)


def circulant_eigenvalues(h: float, n: int) -> np.ndarray:
    gamma = fgn_autocovariance(h, n)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.fft(row).real


def sample_path_circulant(
    m: HurstModel, n: int, dt: float, seed: int, n_paths: int = 1
) -> FbmPath:
    """Circulant embedding of fractional Gaussian noise, then a cumulative sum.

    Real and imaginary parts of one complex draw are independent exact
    samples; both are used.  Falls back to the Cholesky sampler when the
    embedding has a negative eigenvalue.
    """
    grid = dt * np.arange(n + 1)
    lam = circulant_eigenvalues(m.h, n)
    if np.min(lam) < -1e-10 * np.max(lam):
        log.warning("negative circulant eigenvalue %.3g; falling back to Cholesky", lam.min())
        return sample_path_cholesky(m, grid, seed, n_paths)
    size = lam.size
    scale = np.sqrt(np.clip(lam, 0, None) / size) * dt**m.h
    values = np.zeros((n_paths, n + 1, m.d))
    for k, (a, b) in enumerate(_chunks(n_paths)):
        rng = substream(seed, k)
        count = (b - a) * m.d
        half = (count + 1) // 2
        z = rng.standard_normal((half, size)) + 1j * rng.standard_normal((half, size))
        y = np.fft.fft(scale * z, axis=-1)[:, :n]
        noise = np.concatenate([y.real, y.imag])[:count]
        inc = noise.reshape(b - a, m.d, n).transpose(0, 2, 1)
        values[a:b, 1:, :] = np.cumsum(inc, axis=1)
    return FbmPath(grid, values, seed, m.h)


def pair_covariance(m: HurstModel, s: float, t: float) -> np.ndarray:
    """Per-coordinate 2x2 covariance of ``(B_s, B_t)``."""
    r = cov_r(m, s, t)
    return np.array([[variance_v(m, s), r], [r, variance_v(m, t)]], dtype=float)


def sample_pair(m: HurstModel, s: float, t: float, count: int, seed: int) -> PairSample:
    """``count`` i.i.d. draws of ``(B_s, B_t)``; each array has shape ``(count, d)``."""
    check_off_diagonal(s, t)
    parts = list(iter_pairs(m, s, t, count, seed))
    return PairSample(
        np.concatenate([p.b_s for p in parts]), np.concatenate([p.b_t for p in parts])
    )


def iter_pairs(m: HurstModel, s: float, t: float, count: int, seed: int) -> Iterator[PairSample]:
    """Stream of pair draws in chunks, one Philox substream per chunk."""
    check_off_diagonal(s, t)
    lower = np.linalg.cholesky(pair_covariance(m, s, t))
    for k, (a, b) in enumerate(_chunks(count)):
        z = substream(seed, k).standard_normal((b - a, m.d, 2))
        x = z @ lower.T
        yield PairSample(x[..., 0], x[..., 1])


# Binary dump: 8-byte magic, then little-endian (H: f64, d: u64, n: u64,
# dt: f64, seed: u64), then (n+1)*d little-endian f64 values, row-major.
_MAGIC = b"FBMPATH1"
_HEADER = struct.Struct("<dQQdQ")


def write_path(path: FbmPath, index: int, target) -> None:
    """Write path ``index`` of ``path`` to ``target`` in the binary dump format."""
    n = len(path.grid) - 1
    with open(target, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(path.h, path.d, n, path.dt, path.seed))
        fh.write(np.ascontiguousarray(path.values[index], dtype="<f8").tobytes())


def read_path(source) -> FbmPath:
    raw = Path(source).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not an fBm path dump")
    h, d, n, dt, seed = _HEADER.unpack_from(raw, 8)
    body = np.frombuffer(raw, dtype="<f8", offset=8 + _HEADER.size)
    if body.size != (n + 1) * d:
        raise ValueError("truncated path dump")
    grid = dt * np.arange(n + 1)
    return FbmPath(grid, body.reshape(1, n + 1, d).copy(), int(seed), h)
