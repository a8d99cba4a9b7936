"""Simplex solver for the (penalized) quantile regression linear program.

The primal program is

    min  sum_i [u xi+_i + (1-u) xi-_i] + sum_j w_j (b+_j + b-_j)
    s.t. xi+ - xi- = y - X (b+ - b-),   all variables >= 0

with ``w_j = lam * sqrt(u(1-u)) * sigma_j``.  A basis is described by the
active columns ``S`` (basic coefficients), the interpolated rows ``I``
(rows whose residual variables are nonbasic) and a residual sign label for
every other row.  Only the ``|I| x |S|`` block ``X[I, S]`` has to be
inverted, so the work per pivot does not grow with ``p`` beyond one
``X' a`` product for pricing.

The simplex multipliers of a basis are the dual rank scores ``a`` of

    max  y'a   s.t.  u-1 <= a_i <= u,   |X_j' a| <= w_j.

The ratio test walks the convex piecewise-linear objective along the edge
direction and passes through residual sign changes (bound flips of the
corresponding ``a_i``) for as long as the directional derivative stays
negative.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, _validate_u, penalized_objective, penalty_weights

logger = logging.getLogger(__name__)

BLAND_AFTER = 50
REFACTOR_EVERY = 64
SLACK_TOL = 1e-7


class SolverError(RuntimeError):
    """Raised when the simplex iteration fails to reach an optimal basis."""


class BasisStatus(enum.Enum):
    BASIC = "basic"
    NONBASIC_LOWER = "nonbasic_lower"
    NONBASIC_UPPER = "nonbasic_upper"


@dataclass(frozen=True)
class QuantileFit:
    """Optimal basic solution of the quantile regression program at ``(u, lam)``.

    ``dual_scores`` are the rank scores in ``[u-1, u]``.  ``basis_status``
    lists the status of the ``n`` rank scores followed by the ``p``
    constraint activities ``X_j' a``.  Objectives are on the ``1/n`` scale.
    """

    u: float
    lam: float
    beta: np.ndarray
    dual_scores: np.ndarray
    support: tuple
    primal_objective: float
    dual_objective: float
    n_interpolated: int
    basis_status: tuple
    iterations: int = 0
    perturbed: bool = False
    restrict: Optional[tuple] = None
    exempt_intercept: bool = False

    @property
    def duality_gap(self) -> float:
        return self.primal_objective - self.dual_objective


@dataclass
class OptimalityReport:
    duality_gap: float
    max_dual_box_violation: float
    max_dual_constraint_violation: float
    complementary_slackness_ok: bool
    details: list = field(default_factory=list)
    residual_sign_violations: list = field(default_factory=list)
    degenerate_active: list = field(default_factory=list)


def support_tol(beta: np.ndarray) -> float:
    return 1e-8 * max(1.0, float(np.max(np.abs(beta))) if beta.size else 1.0)


def residual_tol(y: np.ndarray) -> np.ndarray:
    return 1e-9 * (1.0 + np.abs(y))


def gap_tol(primal_objective: float) -> float:
    return 1e-8 * (1.0 + abs(primal_objective))


class _Simplex:
    """Single-use solver state; see the module docstring."""

    def __init__(self, X, y, u, w, allowed, max_iter):
        self.X = X
        self.y = y
        self.u = u
        self.w = w
        self.allowed = allowed
        self.max_iter = max_iter
        n, p = X.shape
        self.n, self.p = n, p
        self.colnorm = np.sqrt(np.mean(X * X, axis=0))
        self.colnorm[self.colnorm == 0] = 1.0
        self.S: list = []
        self.I: list = []
        self.sgn = np.zeros(0)
        self.inS = np.zeros(p, dtype=bool)
        self.inI = np.zeros(n, dtype=bool)
        self.t = np.where(y >= 0, 1.0, -1.0)
        self.Ninv = np.zeros((0, 0))
        self.iterations = 0
        self.updates = 0
        scale = max(1.0, float(np.max(np.abs(y))) if n else 1.0)
        self.dual_tol = 1e-10 * n * self.colnorm
        self.row_tol = 1e-10
        self.pivot_tol = 1e-11 * scale
        self.coef_pivot_tol = 1e-13

    # -- basis algebra -------------------------------------------------
    def refactor(self):
        if self.S:
            M = self.X[np.ix_(self.I, self.S)]
            self.Ninv = np.linalg.inv(M)
        else:
            self.Ninv = np.zeros((0, 0))
        self.updates = 0

    def point(self):
        S, I = self.S, self.I
        if S:
            beta_S = self.Ninv @ self.y[I]
            XS = self.X[:, S]
            r = self.y - XS @ beta_S
        else:
            beta_S = np.zeros(0)
            XS = np.zeros((self.n, 0))
            r = self.y.copy()
        a = np.where(self.t > 0, self.u, self.u - 1.0)
        if S:
            a[I] = 0.0
            rhs = self.sgn * self.w[S] - XS.T @ a
            a[I] = self.Ninv.T @ rhs
        return beta_S, XS, r, a

    def _border(self, i, j):
        """Add row ``i`` to I and column ``j`` to S."""
        X, I, S = self.X, self.I, self.S
        if not S:
            self.Ninv = np.array([[1.0 / X[i, j]]])
            return
        c = X[I, j]
        r = X[i, S]
        e = self.Ninv @ c
        f = r @ self.Ninv
        s = X[i, j] - r @ e
        k = len(S)
        N = np.empty((k + 1, k + 1))
        N[:k, :k] = self.Ninv + np.outer(e, f) / s
        N[:k, k] = -e / s
        N[k, :k] = -f / s
        N[k, k] = 1.0 / s
        self.Ninv = N

    def _replace_row(self, q, i):
        r = self.X[i, self.S]
        f = r @ self.Ninv
        cq = self.Ninv[:, q].copy()
        s = f[q]
        self.Ninv -= np.outer(cq, f) / s
        self.Ninv[:, q] = cq / s

    def _replace_col(self, q, j):
        e = self.Ninv @ self.X[self.I, j]
        rq = self.Ninv[q, :].copy()
        s = e[q]
        self.Ninv -= np.outer(e, rq) / s
        self.Ninv[q, :] = rq / s

    def _remove(self, q_row, q_col):
        N = self.Ninv
        piv = N[q_col, q_row]
        keep_c = np.arange(N.shape[0]) != q_col
        keep_r = np.arange(N.shape[1]) != q_row
        self.Ninv = (N[np.ix_(keep_c, keep_r)]
                     - np.outer(N[keep_c, q_row], N[q_col, keep_r]) / piv)

    # -- iteration -----------------------------------------------------
    def price(self, a, bland):
        """Return the entering candidate or None at optimality."""
        u = self.u
        g = self.X.T @ a
        viol = np.abs(g) - self.w - self.dual_tol
        ok = self.allowed & ~self.inS & (viol > 0)
        cols = np.flatnonzero(ok)
        col_score = (np.abs(g[cols]) - self.w[cols]) / (self.n * self.colnorm[cols])

        rows, row_score, row_tau = [], [], []
        if self.I:
            aI = a[self.I]
            up = aI - u
            lo = (u - 1.0) - aI
            for q, i in enumerate(self.I):
                if up[q] > self.row_tol:
                    rows.append(q); row_score.append(up[q]); row_tau.append(1.0)
                elif lo[q] > self.row_tol:
                    rows.append(q); row_score.append(lo[q]); row_tau.append(-1.0)

        if cols.size == 0 and not rows:
            return None
        if bland:
            # lowest global index: columns 0..p-1, then rows p..p+n-1
            if cols.size:
                j = int(cols[0])
                return ("col", j, float(np.sign(g[j])), self.w[j] - abs(g[j]))
            order = np.argsort([self.I[q] for q in rows], kind="stable")
            m = int(order[0])
        else:
            best_col = int(np.argmax(col_score)) if cols.size else -1
            best_row = int(np.argmax(row_score)) if rows else -1
            if best_row < 0 or (best_col >= 0 and col_score[best_col] >= row_score[best_row]):
                j = int(cols[best_col])
                return ("col", j, float(np.sign(g[j])), self.w[j] - abs(g[j]))
            m = best_row
        q, tau = rows[m], row_tau[m]
        return ("row", q, tau, -row_score[m])

    def step(self, cand, beta_S, XS, r, a):
        """Perform one pivot; return the step length."""
        kind, idx, sign, slope = cand
        S, I = self.S, self.I
        k = len(S)
        if kind == "col":
            j = idx
            if k:
                dS = -sign * (self.Ninv @ self.X[I, j])
                dr = -(XS @ dS) - sign * self.X[:, j]
            else:
                dS = np.zeros(0)
                dr = -sign * self.X[:, j]
            skip_row = -1
        else:
            q = idx
            dS = -sign * self.Ninv[:, q]
            dr = -(XS @ dS)
            skip_row = I[q]

        # row breakpoints: residual crosses zero against its label
        free = ~self.inI
        if skip_row >= 0:
            free[skip_row] = False
        moving = free & (self.t * dr < 0) & (np.abs(dr) > self.pivot_tol)
        rix = np.flatnonzero(moving)
        r_theta = np.maximum(self.t[rix] * r[rix], 0.0) / np.abs(dr[rix])
        r_jump = np.abs(dr[rix])

        # column breakpoints: an active coefficient crosses zero
        cmove = (self.sgn * dS < 0) & (np.abs(dS) > self.coef_pivot_tol)
        cix = np.flatnonzero(cmove)
        c_theta = np.maximum(self.sgn[cix] * beta_S[cix], 0.0) / np.abs(dS[cix])
        c_jump = 2.0 * self.w[np.asarray(S, dtype=int)[cix]] * np.abs(dS[cix]) if k else np.zeros(0)

        theta = np.concatenate([r_theta, c_theta])
        jump = np.concatenate([r_jump, c_jump])
        # tie-break by global index: rows as p + i, columns as their index
        key = np.concatenate([self.p + rix, np.asarray(S, dtype=int)[cix] if k else np.zeros(0, int)])
        is_row = np.concatenate([np.ones(rix.size, bool), np.zeros(cix.size, bool)])
        pos = np.concatenate([rix, cix])
        order = np.lexsort((key, theta))

        stop = -1
        for o in order:
            if slope + jump[o] >= 0.0:
                stop = o
                break
            slope += jump[o]
        if stop < 0:
            raise SolverError("unbounded edge direction (numerical breakdown)")

        # labels of passed breakpoints flip
        passed = order[: int(np.flatnonzero(order == stop)[0])]
        for o in passed:
            if is_row[o]:
                self.t[pos[o]] = -self.t[pos[o]]
            else:
                self.sgn[pos[o]] = -self.sgn[pos[o]]

        theta_star = float(theta[stop])
        if is_row[stop]:
            i_new = int(pos[stop])
            if kind == "col":
                self._border(i_new, idx)
                S.append(idx); I.append(i_new)
                self.sgn = np.append(self.sgn, sign)
                self.inS[idx] = True
            else:
                self._replace_row(idx, i_new)
                old = I[idx]
                I[idx] = i_new
                self.inI[old] = False
                self.t[old] = sign
            self.inI[i_new] = True
        else:
            qc = int(pos[stop])
            if kind == "col":
                self._replace_col(qc, idx)
                self.inS[S[qc]] = False
                S[qc] = idx
                self.sgn[qc] = sign
                self.inS[idx] = True
            else:
                old = I[idx]
                self._remove(idx, qc)
                self.inS[S[qc]] = False
                del S[qc]
                del I[idx]
                self.sgn = np.delete(self.sgn, qc)
                self.inI[old] = False
                self.t[old] = sign
        self.updates += 1
        return theta_star

    def run(self):
        degenerate = 0
        bland = False
        clean_checks = 0
        while True:
            if self.updates >= REFACTOR_EVERY:
                self.refactor()
            beta_S, XS, r, a = self.point()
            cand = self.price(a, bland)
            if cand is None:
                if self.updates == 0 or clean_checks > 2:
                    return beta_S, r, a
                # confirm optimality on a freshly factored basis
                self.refactor()
                clean_checks += 1
                continue
            if self.iterations >= self.max_iter:
                raise SolverError(f"iteration limit {self.max_iter} exceeded")
            self.iterations += 1
            theta = self.step(cand, beta_S, XS, r, a)
            if theta <= 1e-14:
                degenerate += 1
                if degenerate >= BLAND_AFTER:
                    bland = True
            else:
                degenerate = 0
                bland = False


def _build_fit(d, u, lam, beta, a, iterations, perturbed, restrict, exempt, S, I, sgn, t):
    n, p = d.n, d.p
    beta = np.asarray(beta, dtype=float)
    a = np.clip(a, u - 1.0, u)
    stol = support_tol(beta)
    support = tuple(int(j) for j in np.flatnonzero(np.abs(beta) > stol))
    resid = d.y - d.X @ beta
    n_interp = int(np.sum(np.abs(resid) <= residual_tol(d.y)))
    primal = penalized_objective(d, u, lam, beta, exempt_intercept=exempt)
    dual = float(np.mean(d.y * a))

    status = []
    inI = np.zeros(n, bool)
    inI[I] = True
    for i in range(n):
        if inI[i]:
            status.append(BasisStatus.BASIC)
        else:
            status.append(BasisStatus.NONBASIC_UPPER if t[i] > 0 else BasisStatus.NONBASIC_LOWER)
    col_state = {j: s for j, s in zip(S, sgn)}
    for j in range(p):
        if j in col_state:
            status.append(BasisStatus.NONBASIC_UPPER if col_state[j] > 0 else BasisStatus.NONBASIC_LOWER)
        else:
            status.append(BasisStatus.BASIC)

    beta.setflags(write=False)
    a.setflags(write=False)
    return QuantileFit(u=u, lam=float(lam), beta=beta, dual_scores=a, support=support,
                       primal_objective=primal, dual_objective=dual,
                       n_interpolated=n_interp, basis_status=tuple(status),
                       iterations=iterations, perturbed=perturbed,
                       restrict=restrict, exempt_intercept=exempt)


def solve_qr_lp(d: Dataset, u: float, lam: float, restrict: Optional[Sequence[int]] = None,
                exempt_intercept: bool = False, max_iter: Optional[int] = None,
                perturb_seed: int = 0) -> QuantileFit:
    """Solve the penalized quantile regression program exactly.

    Parameters
    ----------
    d : Dataset
    u : float
        Quantile index in (0, 1).
    lam : float
        Penalty level; the per-coefficient weight is
        ``lam * sqrt(u(1-u)) * sigma_j / n`` on the objective scale.
    restrict : sequence of int, optional
        Only these columns may be nonzero.  An empty sequence fits the
        empty model.
    exempt_intercept : bool
        Drop the penalty on ``d.intercept_col``.
    max_iter : int, optional
        Pivot limit, default ``50 * (n + p)``.  When it is hit the response
        is perturbed by about 1e-10 of its scale and the problem re-solved
        once before giving up.

    Returns
    -------
    QuantileFit
    """
    u = _validate_u(u)
    lam = float(lam)
    if not lam >= 0:
        raise ValueError(f"penalty level must be nonnegative, got {lam}")
    n, p = d.n, d.p
    allowed = np.ones(p, dtype=bool)
    if restrict is not None:
        restrict = tuple(sorted({int(j) for j in restrict}))
        if any(j < 0 or j >= p for j in restrict):
            raise ValueError(f"restrict indices must lie in [0, {p})")
        allowed[:] = False
        allowed[list(restrict)] = True
    if max_iter is None:
        max_iter = 50 * (n + p)
    w = penalty_weights(d, u, lam, exempt_intercept)
    X = np.ascontiguousarray(d.X)

    y = np.asarray(d.y, dtype=float)
    perturbed = False
    for attempt in range(2):
        solver = _Simplex(X, y, u, w, allowed, max_iter)
        try:
            beta_S, r, a = solver.run()
            break
        except (SolverError, np.linalg.LinAlgError) as exc:
            if attempt == 1:
                raise SolverError(f"simplex failed at u={u}, lam={lam}: {exc}") from exc
            logger.warning("simplex failed (%s); retrying with perturbed response", exc)
            rng = np.random.default_rng(perturb_seed)
            scale = max(1.0, float(np.max(np.abs(d.y))))
            y = d.y + 1e-10 * scale * rng.choice([-1.0, 1.0], size=n)
            perturbed = True

    beta = np.zeros(p)
    if solver.S:
        # final coefficients from a fresh solve on the original response
        M = X[np.ix_(solver.I, solver.S)]
        beta[solver.S] = np.linalg.solve(M, d.y[solver.I]) if not perturbed else beta_S
    return _build_fit(d, u, lam, beta, a, solver.iterations, perturbed, restrict,
                      exempt_intercept, solver.S, solver.I, solver.sgn, solver.t)


def verify_optimality(fit: QuantileFit, d: Dataset, slack_tol: float = SLACK_TOL) -> OptimalityReport:
    """Recheck primal/dual optimality of ``fit`` from scratch.

    Dual quantities are on the ``E_n`` scale: ``|E_n[x_ij a_i]| <=
    lam sqrt(u(1-u)) sigma_j / n``.  Complementary slackness requires every
    supported coefficient to sit on the bound matching its sign and every
    non-interpolated residual to carry the rank score of its side.
    Constraints active without support membership are listed as
    degenerate; they do not fail the check.
    """
    u, lam = fit.u, fit.lam
    a = np.asarray(fit.dual_scores, dtype=float)
    beta = np.asarray(fit.beta, dtype=float)
    n = d.n
    bound = penalty_weights(d, u, lam, fit.exempt_intercept) / n
    corr = d.X.T @ a / n
    allowed = np.ones(d.p, dtype=bool)
    if fit.restrict is not None:
        allowed[:] = False
        allowed[list(fit.restrict)] = True

    box = float(max(0.0, np.max(a - u), np.max((u - 1.0) - a)))
    cviol = np.maximum(np.abs(corr) - bound, 0.0)
    cviol = float(np.max(cviol[allowed])) if allowed.any() else 0.0

    primal = penalized_objective(d, u, lam, beta, exempt_intercept=fit.exempt_intercept)
    dual = float(np.mean(d.y * a))

    ok = True
    details = []
    degenerate = []
    stol = support_tol(beta)
    for j in range(d.p):
        in_support = abs(beta[j]) > stol
        active = 0
        if abs(corr[j] - bound[j]) <= slack_tol:
            active = 1
        elif abs(corr[j] + bound[j]) <= slack_tol:
            active = -1
        if in_support:
            want = 1 if beta[j] > 0 else -1
            if active != want and not (bound[j] == 0 and abs(corr[j]) <= slack_tol):
                ok = False
        elif active and allowed[j]:
            degenerate.append(j)
        details.append({"index": j, "beta": float(beta[j]), "correlation": float(corr[j]),
                        "bound": float(bound[j]), "active": active, "in_support": bool(in_support)})

    resid = d.y - d.X @ beta
    rtol = residual_tol(d.y)
    bad_rows = []
    for i in range(n):
        if resid[i] > rtol[i] and abs(a[i] - u) > slack_tol:
            bad_rows.append(i)
        elif resid[i] < -rtol[i] and abs(a[i] - (u - 1.0)) > slack_tol:
            bad_rows.append(i)
    if bad_rows:
        ok = False
    return OptimalityReport(duality_gap=primal - dual, max_dual_box_violation=box,
                            max_dual_constraint_violation=cviol,
                            complementary_slackness_ok=ok, details=details,
                            residual_sign_violations=bad_rows, degenerate_active=degenerate)
