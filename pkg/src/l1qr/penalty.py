"""Pivotal, simulation-based choice of the penalty level.

Conditional on the design, the sup-score statistic

    Lambda = sup_{u in U} max_j |sum_i x_ij (u - 1{U_i <= u})| / (sigma_j sqrt(u(1-u)))

with ``U_i`` iid uniform has a known distribution.  Its ``(1 - alpha)``
quantile times a constant ``c`` is the penalty level.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, QuantileGrid
from .rng import PIVOTAL, default_threads, stream

DEFAULT_ALPHA = 0.1
DEFAULT_C = 2.0
DEFAULT_R = 1000
_CHUNK = 256


@dataclass(frozen=True)
class PenaltyCalibration:
    alpha: float
    c: float
    n_sims: int
    u_grid: QuantileGrid
    lambda_samples: np.ndarray
    lambda0: float
    seed: int

    def to_dict(self, include_samples: bool = True) -> dict:
        out = {
            "alpha": self.alpha,
            "c": self.c,
            "n_sims": self.n_sims,
            "u_grid": {"points": list(self.u_grid.points), "lo": self.u_grid.lo, "hi": self.u_grid.hi},
            "seed": self.seed,
            "lambda0": self.lambda0,
        }
        if include_samples:
            out["lambda_samples"] = [float(v) for v in self.lambda_samples]
        return out


def _draw_uniforms(n: int, seed: int, first: int, count: int) -> np.ndarray:
    out = np.empty((count, n))
    for r in range(count):
        out[r] = stream(seed, PIVOTAL, first + r).random(n)
    return out


def _points_statistic(Z: np.ndarray, V: np.ndarray, points) -> np.ndarray:
    """Maximum over the finite set ``points`` for each row of ``V``."""
    best = np.zeros(V.shape[0])
    for u in points:
        W = u - (V <= u)
        s = np.abs(W @ Z).max(axis=1) / math.sqrt(u * (1.0 - u))
        np.maximum(best, s, out=best)
    return best


def _interval_statistic(Z: np.ndarray, v: np.ndarray, lo: float, hi: float) -> float:
    """Exact supremum over ``u in [lo, hi]`` for one draw.

    Between consecutive order statistics the score is ``u A - B`` for fixed
    ``A, B``; divided by ``sqrt(u(1-u))`` its only interior critical point
    is ``u = B / (2B - A)``.
    """
    order = np.argsort(v, kind="stable")
    vs = v[order]
    C = np.vstack([np.zeros(Z.shape[1]), np.cumsum(Z[order], axis=0)])
    A = C[-1]
    # piece k covers [vs[k-1], vs[k]) with k uniforms at or below u
    left = np.concatenate([[0.0], vs])
    right = np.concatenate([vs, [1.0]])
    a = np.maximum(left, lo)
    b = np.minimum(right, hi)
    keep = a <= b
    a, b, C = a[keep], b[keep], C[keep]

    def value(uu):
        uu = uu[:, None] if uu.ndim == 1 else uu
        return np.abs(uu * A - C) / np.sqrt(uu * (1.0 - uu))

    best = max(value(a).max(), value(b).max())
    with np.errstate(divide="ignore", invalid="ignore"):
        ustar = C / (2.0 * C - A)
    inside = np.isfinite(ustar) & (ustar > a[:, None]) & (ustar < b[:, None])
    if inside.any():
        best = max(best, value(np.where(inside, ustar, 0.5))[inside].max())
    return float(best)


def simulate_pivotal_lambda(d: Dataset, grid: QuantileGrid, R: int = DEFAULT_R,
                            seed: int = 0, continuous: bool = True,
                            threads: Optional[int] = None) -> np.ndarray:
    """Draw ``R`` realizations of the pivotal statistic conditional on ``d.X``.

    The response is never read.  When ``grid.lo < grid.hi`` and
    ``continuous`` is set, the supremum runs over the whole interval
    ``[lo, hi]`` (computed exactly); otherwise over the grid points.
    Draw ``r`` uses its own random stream keyed by ``(seed, r)``.
    """
    R = int(R)
    if R < 1:
        raise ValueError("need at least one simulation draw")
    Z = np.asarray(d.X) / np.asarray(d.col_scales)
    n = d.n
    interval = continuous and grid.lo < grid.hi
    threads = default_threads() if threads is None else max(1, int(threads))

    def chunk(first):
        count = min(_CHUNK, R - first)
        V = _draw_uniforms(n, seed, first, count)
        if interval:
            return np.array([_interval_statistic(Z, V[r], grid.lo, grid.hi) for r in range(count)])
        return _points_statistic(Z, V, grid.points)

    starts = list(range(0, R, _CHUNK))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(s) for s in starts]
    out = np.concatenate(parts)
    out.setflags(write=False)
    return out


def penalty_level(samples, alpha: float = DEFAULT_ALPHA, c: float = DEFAULT_C) -> float:
    """``c`` times the ``ceil((1 - alpha) R)``-th order statistic."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if x.size == 0:
        raise ValueError("no samples")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    rank = math.ceil((1.0 - alpha) * x.size - 1e-9)
    rank = min(max(rank, 1), x.size)
    return float(c * x[rank - 1])


def calibrate_penalty(d: Dataset, grid: QuantileGrid, alpha: float = DEFAULT_ALPHA,
                      c: float = DEFAULT_C, R: int = DEFAULT_R, seed: int = 0,
                      continuous: bool = True, threads: Optional[int] = None) -> PenaltyCalibration:
    samples = simulate_pivotal_lambda(d, grid, R, seed, continuous=continuous, threads=threads)
    return PenaltyCalibration(alpha=float(alpha), c=float(c), n_sims=int(R), u_grid=grid,
                              lambda_samples=samples, lambda0=penalty_level(samples, alpha, c),
                              seed=int(seed))


def theoretical_scale(n: int, p: int, grid: QuantileGrid) -> float:
    """Growth factor ``W_U sqrt(n log p)`` of the analytic bound on Lambda.

    ``W_U = max_{u in U} 1/sqrt(u(1-u))`` is attained at the endpoint of
    ``[lo, hi]`` farthest from 1/2.  The universal constant is omitted, so
    this is for scaling diagnostics only.
    """
    if n < 2 or p < 2:
        raise ValueError("need n >= 2 and p >= 2")
    w = max(1.0 / math.sqrt(u * (1.0 - u)) for u in (grid.lo, grid.hi))
    return w * math.sqrt(n * math.log(p))
