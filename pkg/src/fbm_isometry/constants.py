"""Recorded constants for bounds whose constant is only known to exist.

The values are maxima of the sampled ratios in :mod:`fbm_isometry.bounds`
over a dense sample, frozen in ``data/constants.json``.  Checks allow
``HEADROOM`` above the recorded value because a fresh sample can land
slightly closer to the supremum than the dense one did.

Regenerate with ``python3 -m fbm_isometry.constants``.
"""

from __future__ import annotations

import json
import logging
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .bounds import (
    d_ratio,
    eta_product_ratios,
    grdet_ratio,
    sample_q_region,
    sample_simplex,
    west_envelope,
)
from .covariance import HurstModel

log = logging.getLogger(__name__)

HEADROOM = 0.10
RECORD_H = (0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
RECORD_SEED = 1
RECORD_SAMPLES = 10**6
WEST_Q = (1.5, 2.0)
WEST_GRID = 50
WEST_SEED = 0


def jittered_grid(seed: int, n: int = WEST_GRID, T: float = 1.0):
    """``n x n`` grid of ``[0,T]^2``, one uniformly jittered node per row and column cell."""
    rng = np.random.default_rng(seed)
    base = T * (np.arange(n) + rng.uniform(0.05, 0.95, (2, n))) / n
    s, t = np.meshgrid(base[0], base[1], indexing="ij")
    s, t = s.ravel(), t.ravel()
    keep = s != t
    return s[keep], t[keep]


def west_ratio_max(m: HurstModel, q: float, seed: int, n: int = WEST_GRID) -> float:
    from .quadrature import lambda_abs_moment

    s, t = jittered_grid(seed, n)
    vals, ok = lambda_abs_moment(m, s, t, q, rtol=1e-6)
    if not ok:
        log.warning("angular rule did not reach tolerance for H=%g q=%g", m.h, q)
    return float(np.max(vals ** (1 / q) / west_envelope(m, s, t)))


def record_constants(h_values=RECORD_H, n: int = RECORD_SAMPLES, seed: int = RECORD_SEED) -> dict:
    out = {"headroom": HEADROOM, "seed": seed, "samples": n, "west_seed": WEST_SEED, "values": {}}
    for h in h_values:
        m = HurstModel(h)
        rng = np.random.default_rng(seed)
        pts = sample_simplex(rng, n)
        x, y = sample_q_region(rng, n)
        entry = {
            "grdet": float(grdet_ratio(m, x, y).max()),
            "d_func": float(d_ratio(m, pts.delta, pts.s, pts.t).max()),
        }
        for name, ratio in eta_product_ratios(m, pts.eps, pts.delta, pts.s, pts.t).items():
            entry[name] = float(ratio.max())
        for q in WEST_Q:
            entry[f"west_q{q:g}"] = west_ratio_max(m, q, WEST_SEED)
        out["values"][f"{h:g}"] = entry
    return out


@lru_cache(maxsize=1)
def load_constants() -> dict:
    raw = resources.files("fbm_isometry").joinpath("data/constants.json").read_text()
    return json.loads(raw)


def recorded(h: float, name: str) -> float:
    """Recorded constant ``name`` at Hurst exponent ``h``."""
    table = load_constants()["values"]
    key = f"{h:g}"
    if key not in table:
        raise KeyError(f"no recorded constants for H={h}; recorded: {sorted(table)}")
    return table[key][name]


def main() -> None:
    target = Path(__file__).with_name("data") / "constants.json"
    target.parent.mkdir(exist_ok=True)
    target.write_text(json.dumps(record_constants(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
