"""Data containers, the check loss and the penalized quantile objective."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when input data cannot form a valid :class:`Dataset`."""


def _validate_u(u: float) -> float:
    u = float(u)
    if not 0.0 < u < 1.0:
        raise ValueError(f"quantile index must lie in (0, 1), got {u}")
    return u


@dataclass(frozen=True)
class Dataset:
    """Response, design matrix and per-column scales.

    ``X`` is stored unscaled; ``col_scales[j]`` is the root mean square of
    column ``j`` and only enters through the penalty weights.
    """

    y: np.ndarray
    X: np.ndarray
    col_scales: np.ndarray
    intercept_col: Optional[int] = None
    names: Optional[tuple] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def build_dataset(raw, y, intercept_col: Optional[int] = None,
                  names: Optional[Sequence[str]] = None) -> Dataset:
    """Validate inputs and compute column scales.

    Parameters
    ----------
    raw : array_like, shape (n, p)
        Design matrix, one row per observation.
    y : array_like, shape (n,)
        Response.
    intercept_col : int, optional
        Index of the all-ones column, if any.
    names : sequence of str, optional
        Column labels carried along for reporting.
    """
    X = np.array(raw, dtype=float, copy=True)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DataError(f"design must be 2-dimensional, got shape {X.shape}")
    y = np.array(y, dtype=float, copy=True).reshape(-1)
    n, p = X.shape
    if n < 1 or p < 1:
        raise DataError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    if y.shape[0] != n:
        raise DataError(f"dimension mismatch: X has {n} rows, y has {y.shape[0]}")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise DataError(f"non-finite design entry at row {bad[0]}, column {bad[1]}")
    if not np.all(np.isfinite(y)):
        raise DataError(f"non-finite response at row {int(np.argmax(~np.isfinite(y)))}")
    if intercept_col is not None:
        intercept_col = int(intercept_col)
        if not 0 <= intercept_col < p:
            raise DataError(f"intercept_col {intercept_col} out of range for p={p}")
    if names is not None:
        names = tuple(str(s) for s in names)
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} columns")

    scales = np.sqrt(np.mean(X * X, axis=0))
    zero = np.flatnonzero(scales == 0.0)
    for j in zero:
        if j != intercept_col:
            raise DataError(f"column {j} is identically zero")
    if zero.size:
        # a flagged intercept column of zeros is still unusable
        raise DataError(f"intercept column {intercept_col} is identically zero")

    X.setflags(write=False)
    y.setflags(write=False)
    scales.setflags(write=False)
    return Dataset(y=y, X=X, col_scales=scales, intercept_col=intercept_col, names=names)


def check_loss(u: float, t):
    """Asymmetric absolute deviation ``(u - 1{t <= 0}) * t``.

    Works elementwise on arrays.
    """
    u = _validate_u(u)
    t = np.asarray(t, dtype=float)
    out = np.where(t > 0, u * t, (u - 1.0) * t)
    return float(out) if out.ndim == 0 else out


def penalty_weights(d: Dataset, u: float, lam: float,
                    exempt_intercept: bool = False) -> np.ndarray:
    """Per-coefficient penalty ``lam * sqrt(u(1-u)) * sigma_j`` (sum scale)."""
    w = float(lam) * np.sqrt(u * (1.0 - u)) * np.asarray(d.col_scales)
    if exempt_intercept and d.intercept_col is not None:
        w = w.copy()
        w[d.intercept_col] = 0.0
    return w


def quantile_objective(d: Dataset, u: float, b) -> float:
    """Unpenalized sample objective ``E_n[rho_u(y - x'b)]``."""
    b = _coef(d, b)
    return float(np.mean(check_loss(u, d.y - d.X @ b)))


def penalized_objective(d: Dataset, u: float, lam: float, b,
                        exempt_intercept: bool = False) -> float:
    """Quantile objective plus the scaled l1 penalty, both divided by n."""
    u = _validate_u(u)
    if lam < 0:
        raise ValueError(f"penalty level must be nonnegative, got {lam}")
    b = _coef(d, b)
    w = penalty_weights(d, u, lam, exempt_intercept)
    return quantile_objective(d, u, b) + float(w @ np.abs(b)) / d.n


def _coef(d: Dataset, b) -> np.ndarray:
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != d.p:
        raise DataError(f"dimension mismatch: {b.shape[0]} coefficients for p={d.p}")
    return b


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile indices inside ``[lo, hi]``."""

    points: tuple
    lo: float
    hi: float

    def __post_init__(self):
        pts = tuple(float(v) for v in self.points)
        if not pts:
            raise ValueError("quantile grid must be nonempty")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("quantile grid must be strictly increasing")
        lo, hi = float(self.lo), float(self.hi)
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError(f"grid bounds must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]")
        if pts[0] < lo or pts[-1] > hi:
            raise ValueError("grid points must lie in [lo, hi]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_points(cls, points) -> "QuantileGrid":
        pts = sorted(float(v) for v in points)
        return cls(tuple(pts), pts[0], pts[-1])

    @classmethod
    def single(cls, u: float) -> "QuantileGrid":
        u = _validate_u(u)
        return cls((u,), u, u)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def parse_quantiles(spec: str) -> QuantileGrid:
    """Parse ``"lo:hi:step"`` or a comma list such as ``"0.25,0.5"``."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"range spec must be lo:hi:step, got {spec!r}")
        lo, hi, step = (float(s) for s in parts)
        if step <= 0 or hi < lo:
            raise ValueError(f"invalid range spec {spec!r}")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        pts = [round(lo + i * step, 12) for i in range(count)]
        return QuantileGrid(tuple(pts), lo, hi)
    pts = [float(s) for s in spec.split(",") if s.strip()]
    for v in pts:
        _validate_u(v)
    return QuantileGrid.from_points(pts)


@dataclass(frozen=True)
class GroundTruth:
    """True coefficient vector and its support (0-based indices)."""

    beta_true: np.ndarray
    support: tuple = field(default=())

    def __post_init__(self):
        b = np.asarray(self.beta_true, dtype=float)
        object.__setattr__(self, "beta_true", b)
        object.__setattr__(self, "support", tuple(int(j) for j in np.flatnonzero(b)))
