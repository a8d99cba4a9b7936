"""Sparse eigenvalues, support-recovery metrics and restricted-set checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterable, Optional

import numpy as np

from .core import Dataset

EXACT_BUDGET = 2_000_000
_BATCH = 20_000


class BudgetExceeded(RuntimeError):
    """Exact enumeration would exceed the configured submatrix budget."""


@dataclass(frozen=True)
class SparseEigenResult:
    k: int
    value: float
    mode: str
    matrix_kind: str
    support: tuple = ()

    @property
    def is_bound(self) -> bool:
        return self.mode != "exact"


@dataclass(frozen=True)
class SupportMetrics:
    true_support: tuple
    est_support: tuple
    n_selected: int
    n_correct: int
    n_wrong: int
    includes_truth: bool
    exact: bool


def empirical_gram(d: Dataset) -> np.ndarray:
    """``E_n[x_i x_i']``."""
    return d.X.T @ d.X / d.n


def ar1_covariance(p: int, rho: float) -> np.ndarray:
    """Toeplitz matrix with entries ``rho ** |i - j|``."""
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _check_psd(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise ValueError("matrix is not symmetric")
    if np.linalg.eigvalsh(M)[0] < -tol * scale:
        raise ValueError("matrix is not positive semi-definite")
    return (M + M.T) / 2.0


def _exact(M, k, largest):
    p = M.shape[0]
    total = comb(p, k)
    if total > EXACT_BUDGET:
        raise BudgetExceeded(f"C({p},{k}) = {total} submatrices exceeds budget {EXACT_BUDGET}")
    best, best_S = (-np.inf if largest else np.inf), ()
    combos = itertools.combinations(range(p), k)
    while True:
        batch = list(itertools.islice(combos, _BATCH))
        if not batch:
            break
        idx = np.array(batch)
        sub = M[idx[:, :, None], idx[:, None, :]]
        ev = np.linalg.eigvalsh(sub)
        vals = ev[:, -1] if largest else ev[:, 0]
        m = int(np.argmax(vals) if largest else np.argmin(vals))
        if (vals[m] > best) if largest else (vals[m] < best):
            best, best_S = float(vals[m]), tuple(batch[m])
    return best, best_S


def _greedy(M, k, largest):
    p = M.shape[0]
    S: list = []
    value = 0.0
    for _ in range(k):
        cand_vals = []
        for j in range(p):
            if j in S:
                cand_vals.append(-np.inf if largest else np.inf)
                continue
            T = S + [j]
            ev = np.linalg.eigvalsh(M[np.ix_(T, T)])
            cand_vals.append(ev[-1] if largest else ev[0])
        j = int(np.argmax(cand_vals) if largest else np.argmin(cand_vals))
        S.append(j)
        value = float(cand_vals[j])
    return value, tuple(sorted(S))


def _sparse_eig(M, k, mode, matrix_kind, largest):
    M = _check_psd(M)
    p = M.shape[0]
    if not 1 <= k <= p:
        raise ValueError(f"k must lie in [1, {p}], got {k}")
    if mode == "exact":
        value, S = _exact(M, k, largest)
    elif mode == "greedy":
        value, S = _greedy(M, k, largest)
        mode = "greedy_lower_bound" if largest else "greedy_upper_bound"
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SparseEigenResult(k=k, value=max(value, 0.0), mode=mode,
                             matrix_kind=matrix_kind, support=S)


def max_sparse_eigenvalue(M, k: int, mode: str = "exact",
                          matrix_kind: str = "supplied") -> SparseEigenResult:
    """Largest Rayleigh quotient over unit vectors with at most ``k`` nonzeros.

    ``mode="exact"`` enumerates all k x k principal submatrices and refuses
    when there are more than ``EXACT_BUDGET`` of them; ``mode="greedy"``
    grows the support one coordinate at a time and yields a lower bound.
    """
    return _sparse_eig(M, k, mode, matrix_kind, largest=True)


def min_sparse_eigenvalue(M, k: int, mode: str = "exact",
                          matrix_kind: str = "supplied") -> SparseEigenResult:
    """Smallest Rayleigh quotient over ``k``-sparse unit vectors (greedy: upper bound)."""
    return _sparse_eig(M, k, mode, matrix_kind, largest=False)


def support_metrics(beta_est, truth: Iterable[int], tol: float = 1e-8) -> SupportMetrics:
    """Compare the estimated support ``{j : |beta_j| > tol}`` with ``truth``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    beta = np.asarray(beta_est, dtype=float).reshape(-1)
    est = tuple(int(j) for j in np.flatnonzero(np.abs(beta) > tol))
    T = tuple(sorted({int(j) for j in truth}))
    est_set, T_set = set(est), set(T)
    n_correct = len(est_set & T_set)
    return SupportMetrics(true_support=T, est_support=est, n_selected=len(est),
                          n_correct=n_correct, n_wrong=len(est) - n_correct,
                          includes_truth=T_set <= est_set, exact=T_set == est_set)


def restricted_set_membership(delta, truth: Iterable[int], c0: float,
                              n: Optional[int] = None) -> bool:
    """Whether ``delta`` lies in the cone ``||delta_off||_1 <= c0 ||delta_on||_1``.

    With ``n`` given, the off-support part must also have at most ``n``
    nonzeros.
    """
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    delta = np.asarray(delta, dtype=float).reshape(-1)
    on = np.zeros(delta.shape[0], dtype=bool)
    on[list(truth)] = True
    off_mass = float(np.abs(delta[~on]).sum())
    on_mass = float(np.abs(delta[on]).sum())
    if n is not None and int(np.count_nonzero(delta[~on])) > n:
        return False
    return off_mass <= c0 * on_mass
