"""Penalized, post-selection and thresholded quantile regression estimators."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, QuantileGrid, _validate_u
from .lp import QuantileFit, SolverError, solve_qr_lp, support_tol
from .rng import default_threads


@dataclass(frozen=True)
class ProcessFit:
    grid: QuantileGrid
    fits: dict
    lam: float
    union_support: tuple
    max_support_size: int

    def __getitem__(self, u: float) -> QuantileFit:
        return self.fits[float(u)]


@dataclass(frozen=True)
class PostFit:
    u: float
    selected: tuple
    beta_post: np.ndarray
    first_stage: QuantileFit
    empty_model: bool = False
    refit: Optional[QuantileFit] = None


@dataclass(frozen=True)
class PathStep:
    lam: float
    support: tuple
    beta: np.ndarray
    post_beta: np.ndarray
    first: QuantileFit
    post: PostFit


def fit_l1_qr_process(d: Dataset, grid: QuantileGrid, lam: float,
                      exempt_intercept: bool = False,
                      threads: Optional[int] = None) -> ProcessFit:
    """Fit the penalized estimator at every grid point with a common ``lam``."""
    if lam < 0:
        raise ValueError(f"penalty level must be nonnegative, got {lam}")
    threads = default_threads() if threads is None else threads

    def one(u):
        try:
            return solve_qr_lp(d, u, lam, exempt_intercept=exempt_intercept)
        except SolverError as exc:
            raise SolverError(f"quantile {u}: {exc}") from exc

    if threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, grid.points))
    else:
        results = [one(u) for u in grid.points]
    fits = {float(u): f for u, f in zip(grid.points, results)}
    union = sorted(set().union(*(f.support for f in results)))
    return ProcessFit(grid=grid, fits=fits, lam=float(lam), union_support=tuple(union),
                      max_support_size=max(len(f.support) for f in results))


def post_l1_qr(d: Dataset, u: float, first: QuantileFit,
               always_keep_intercept: bool = False) -> PostFit:
    """Unpenalized quantile regression on the columns selected by ``first``.

    An empty selection gives the zero vector with ``empty_model`` set,
    unless ``always_keep_intercept`` is on and ``d`` flags an intercept,
    in which case the intercept is always part of the refit.
    """
    u = _validate_u(u)
    if abs(first.u - u) > 1e-12:
        raise ValueError(f"first stage was fit at u={first.u}, not {u}")
    selected = tuple(first.support)
    keep = set(selected)
    if always_keep_intercept and d.intercept_col is not None:
        keep.add(d.intercept_col)
    if not keep:
        beta = np.zeros(d.p)
        beta.setflags(write=False)
        return PostFit(u=u, selected=selected, beta_post=beta, first_stage=first, empty_model=True)
    refit = solve_qr_lp(d, u, 0.0, restrict=sorted(keep))
    return PostFit(u=u, selected=selected, beta_post=refit.beta, first_stage=first,
                   empty_model=not selected, refit=refit)


def hard_threshold(fit, gamma: float) -> np.ndarray:
    """Zero every coefficient with ``|beta_j| <= gamma``.

    ``fit`` is a :class:`QuantileFit` or a coefficient vector.
    """
    if gamma < 0:
        raise ValueError(f"threshold must be nonnegative, got {gamma}")
    beta = np.asarray(fit.beta if isinstance(fit, QuantileFit) else fit, dtype=float)
    return np.where(np.abs(beta) > gamma, beta, 0.0)


def lambda_path(lambda0: float, K: int) -> list:
    """``[lambda0 / 1, lambda0 / 2, ..., lambda0 / K]``."""
    if not lambda0 > 0:
        raise ValueError(f"lambda0 must be positive, got {lambda0}")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    return [lambda0 / k for k in range(1, int(K) + 1)]


def selection_path(d: Dataset, u: float, lambdas: Sequence[float],
                   exempt_intercept: bool = False,
                   always_keep_intercept: bool = False) -> list:
    """Penalized fit and post-selection refit for each penalty level, in input order.

    Each level is solved from scratch; no nesting of the selected models
    is implied.
    """
    steps = []
    for lam in lambdas:
        if not lam > 0:
            raise ValueError(f"path penalty levels must be positive, got {lam}")
        try:
            first = solve_qr_lp(d, u, lam, exempt_intercept=exempt_intercept)
            post = post_l1_qr(d, u, first, always_keep_intercept=always_keep_intercept)
        except SolverError as exc:
            raise SolverError(f"lambda {lam}: {exc}") from exc
        steps.append(PathStep(lam=float(lam), support=first.support, beta=first.beta,
                              post_beta=post.beta_post, first=first, post=post))
    return steps


def l0_norm(beta) -> int:
    beta = np.asarray(beta, dtype=float)
    return int(np.sum(np.abs(beta) > support_tol(beta)))
