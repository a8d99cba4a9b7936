"""Synthetic correlated-normal designs and the Monte Carlo experiment harness."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import Dataset, GroundTruth, QuantileGrid, build_dataset
from .diagnostics import support_metrics
from .estimators import post_l1_qr
from .lp import SolverError, solve_qr_lp, support_tol
from .penalty import calibrate_penalty
from .rng import DESIGN, default_threads, stream

logger = logging.getLogger(__name__)

ESTIMATOR_ORDER = ("canonical", "penalized", "post", "oracle")
FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class DesignSpec:
    """Intercept plus ``p - 1`` AR(1)-correlated standard normal covariates.

    The default coefficient pattern puts ones on the first ``s``
    non-intercept columns (indices ``1..s``) and zero elsewhere.
    """

    n: int = 200
    p: int = 1000
    s: int = 5
    rho: float = 0.0
    sigma_noise: float = 1.0
    beta_pattern: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 2:
            raise ValueError("need n >= 1 and p >= 2")
        if not 0 <= self.s <= self.p - 1:
            raise ValueError(f"s={self.s} must lie in [0, p-1]")
        if not abs(self.rho) < 1:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if not self.sigma_noise > 0:
            raise ValueError("sigma_noise must be positive")
        if self.beta_pattern is not None and len(self.beta_pattern) != self.p:
            raise ValueError("beta_pattern length must equal p")

    def beta(self) -> np.ndarray:
        if self.beta_pattern is not None:
            return np.asarray(self.beta_pattern, dtype=float)
        b = np.zeros(self.p)
        b[1:1 + self.s] = 1.0
        return b


def generate_design(spec: DesignSpec, rep_index: int = 0) -> tuple:
    """Draw ``(Dataset, GroundTruth)`` for replication ``rep_index``.

    Covariates follow ``z_j = rho z_{j-1} + sqrt(1 - rho^2) w_j``, which
    gives exactly ``Corr(z_i, z_j) = rho^|i-j|``.  Errors are normal with
    standard deviation ``sigma_noise``.
    """
    g = stream(spec.seed, DESIGN, rep_index)
    n, p, rho = spec.n, spec.p, spec.rho
    W = g.standard_normal((n, p - 1))
    Z = np.empty_like(W)
    Z[:, 0] = W[:, 0]
    scale = np.sqrt(1.0 - rho * rho)
    for j in range(1, p - 1):
        Z[:, j] = rho * Z[:, j - 1] + scale * W[:, j]
    X = np.empty((n, p))
    X[:, 0] = 1.0
    X[:, 1:] = Z
    beta = spec.beta()
    y = X @ beta + spec.sigma_noise * g.standard_normal(n)
    return build_dataset(X, y, intercept_col=0), GroundTruth(beta)


@dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo settings.

    ``master_seed`` replaces ``design.seed`` and keys every random stream,
    so the report depends only on this configuration.  With ``lam`` set the
    penalty is fixed; otherwise it is ``c`` times the ``1 - alpha``
    quantile of the pivotal statistic recalibrated on each replication's
    design (``shared_lambda`` calibrates once on replication 0 instead).
    """

    design: DesignSpec
    u: float = 0.5
    n_reps: int = 100
    alpha: float = 0.1
    c: float = 1.0
    R: int = 1000
    lam: Optional[float] = None
    estimators: tuple = ("penalized", "post", "oracle")
    master_seed: int = 0
    shared_lambda: bool = False
    threads: Optional[int] = None
    generator: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n_reps < 1:
            raise ValueError("n_reps must be at least 1")
        unknown = set(self.estimators) - set(ESTIMATOR_ORDER)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if not 0 < self.u < 1:
            raise ValueError("u must lie in (0, 1)")
        if "post" in self.estimators and "penalized" not in self.estimators:
            object.__setattr__(self, "estimators", tuple(self.estimators) + ("penalized",))

    def ordered_estimators(self) -> tuple:
        return tuple(e for e in ESTIMATOR_ORDER if e in self.estimators)

    def to_dict(self) -> dict:
        d = self.design
        return {
            "design": {"n": d.n, "p": d.p, "s": d.s, "rho": d.rho, "sigma_noise": d.sigma_noise},
            "u": self.u,
            "n_reps": self.n_reps,
            "alpha": self.alpha,
            "c": self.c,
            "R": self.R,
            "lambda": self.lam,
            "estimators": list(self.ordered_estimators()),
            "master_seed": self.master_seed,
            "shared_lambda": self.shared_lambda,
        }


@dataclass
class EstimatorSummary:
    name: str
    mean_l0: float
    mean_l1: float
    bias: float
    std_dev: float
    support_histogram: list
    correct_selected_histogram: list
    inclusion_frequency: float
    n_ok: int
    mean_l0_all_columns: Optional[float] = None
    runtime_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "estimator": self.name,
            "mean_l0": self.mean_l0,
            "mean_l1": self.mean_l1,
            "bias": self.bias,
            "std_dev": self.std_dev,
            "inclusion_frequency": self.inclusion_frequency,
            "n_ok": self.n_ok,
            "mean_l0_all_columns": self.mean_l0_all_columns,
            "support_histogram": [list(b) for b in self.support_histogram],
            "correct_selected_histogram": [list(b) for b in self.correct_selected_histogram],
        }


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    estimators: dict
    lambdas: list
    n_failed: int
    failures: list
    runtime_seconds: float = 0.0

    def to_dict(self) -> dict:
        lam = np.asarray(self.lambdas, dtype=float)
        return {
            "config": self.config.to_dict(),
            "n_failed": self.n_failed,
            "failures": self.failures,
            "lambda_summary": {
                "mean": float(lam.mean()) if lam.size else None,
                "min": float(lam.min()) if lam.size else None,
                "max": float(lam.max()) if lam.size else None,
            },
            "estimators": [self.estimators[k].to_dict() for k in self.config.ordered_estimators()],
        }

    def timing(self) -> dict:
        return {"total_seconds": self.runtime_seconds,
                "per_estimator_seconds": {k: v.runtime_seconds for k, v in self.estimators.items()}}


def report_metrics(errors, beta_true) -> tuple:
    """``(bias, std_dev, mean_l0, mean_l1)`` from per-replication error vectors.

    ``bias`` is the Euclidean norm of the mean error and ``std_dev`` the
    root mean squared distance of the estimates from their Monte Carlo mean.
    The norms are those of the estimates ``beta_true + error``.
    """
    E = np.asarray(errors, dtype=float)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ValueError("need a nonempty sequence of equal-length error vectors")
    B = E + np.asarray(beta_true, dtype=float)[None, :]
    mean_err = E.mean(axis=0)
    bias = float(np.linalg.norm(mean_err))
    dev = E - mean_err
    std = float(np.sqrt(np.mean(np.sum(dev * dev, axis=1))))
    l0 = np.mean([np.sum(np.abs(b) > support_tol(b)) for b in B])
    l1 = np.mean(np.abs(B).sum(axis=1))
    return bias, std, float(l0), float(l1)


def _histogram(values) -> list:
    vals, counts = np.unique(np.asarray(values, dtype=int), return_counts=True)
    return [(int(v), int(c)) for v, c in zip(vals, counts)]


def _derived_seed(master_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), 7, int(rep)]).generate_state(1)[0])


def _run_rep(cfg: ExperimentConfig, rep: int, shared_lam: Optional[float]) -> dict:
    spec = replace(cfg.design, seed=cfg.master_seed)
    gen = cfg.generator or generate_design
    d, truth = gen(spec, rep)
    out = {"rep": rep, "betas": {}, "times": {}}
    if cfg.lam is not None:
        lam = float(cfg.lam)
    elif shared_lam is not None:
        lam = shared_lam
    else:
        cal = calibrate_penalty(d, QuantileGrid.single(cfg.u), cfg.alpha, cfg.c, cfg.R,
                                seed=_derived_seed(cfg.master_seed, rep), threads=1)
        lam = cal.lambda0
    out["lambda"] = lam
    out["truth"] = truth
    ests = cfg.ordered_estimators()
    first = None
    for name in ests:
        t0 = time.perf_counter()
        if name == "canonical":
            beta = solve_qr_lp(d, cfg.u, 0.0).beta
        elif name == "penalized":
            first = solve_qr_lp(d, cfg.u, lam)
            beta = first.beta
        elif name == "post":
            beta = post_l1_qr(d, cfg.u, first).beta_post
        else:
            beta = solve_qr_lp(d, cfg.u, 0.0, restrict=truth.support).beta
        out["times"][name] = time.perf_counter() - t0
        out["betas"][name] = np.asarray(beta)
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run all replications and aggregate per-estimator metrics.

    Replications whose solver fails are excluded and counted; more than 5%
    failures raises :class:`SolverError`.
    """
    t_start = time.perf_counter()
    threads = default_threads() if cfg.threads is None else max(1, int(cfg.threads))

    shared = None
    if cfg.lam is None and cfg.shared_lambda:
        spec = replace(cfg.design, seed=cfg.master_seed)
        d0, _ = (cfg.generator or generate_design)(spec, 0)
        shared = calibrate_penalty(d0, QuantileGrid.single(cfg.u), cfg.alpha, cfg.c, cfg.R,
                                   seed=_derived_seed(cfg.master_seed, 0), threads=1).lambda0

    def task(rep):
        try:
            return _run_rep(cfg, rep, shared)
        except SolverError as exc:
            return {"rep": rep, "error": str(exc)}

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(task, range(cfg.n_reps)))
    else:
        results = [task(r) for r in range(cfg.n_reps)]
    results.sort(key=lambda r: r["rep"])

    failures = [{"rep": r["rep"], "error": r["error"]} for r in results if "error" in r]
    ok = [r for r in results if "error" not in r]
    if len(failures) > FAILURE_LIMIT * cfg.n_reps:
        raise SolverError(f"{len(failures)} of {cfg.n_reps} replications failed")
    if not ok:
        raise SolverError("all replications failed")

    summaries = {}
    for name in cfg.ordered_estimators():
        errs, sizes, correct, incl = [], [], [], []
        runtime = 0.0
        beta_true = None
        for r in ok:
            b = r["betas"][name]
            truth = r["truth"]
            beta_true = truth.beta_true
            errs.append(b - truth.beta_true)
            m = support_metrics(b, truth.support, tol=support_tol(b))
            sizes.append(m.n_selected)
            correct.append(m.n_correct)
            incl.append(m.includes_truth)
            runtime += r["times"][name]
        if _same_truth(ok):
            bias, std, l0, l1 = report_metrics(errs, beta_true)
        else:
            bias, std, l0, l1 = _metrics_varying_truth(ok, name)
        summaries[name] = EstimatorSummary(
            name=name, mean_l0=l0, mean_l1=l1, bias=bias, std_dev=std,
            support_histogram=_histogram(sizes), correct_selected_histogram=_histogram(correct),
            inclusion_frequency=float(np.mean(incl)), n_ok=len(ok),
            # full-vector count alongside the basic solution's own l0
            mean_l0_all_columns=float(cfg.design.p) if name == "canonical" else None,
            runtime_seconds=runtime)
    return ExperimentReport(config=cfg, estimators=summaries,
                            lambdas=[r["lambda"] for r in ok], n_failed=len(failures),
                            failures=failures, runtime_seconds=time.perf_counter() - t_start)


def _same_truth(results) -> bool:
    first = results[0]["truth"].beta_true
    return all(np.array_equal(r["truth"].beta_true, first) for r in results[1:])


def _metrics_varying_truth(results, name) -> tuple:
    # user generators may redraw the truth; norms are then averaged per replication
    errs = np.array([r["betas"][name] - r["truth"].beta_true for r in results])
    mean_err = errs.mean(axis=0)
    dev = errs - mean_err
    B = [r["betas"][name] for r in results]
    return (float(np.linalg.norm(mean_err)),
            float(np.sqrt(np.mean(np.sum(dev * dev, axis=1)))),
            float(np.mean([np.sum(np.abs(b) > support_tol(b)) for b in B])),
            float(np.mean([np.abs(b).sum() for b in B])))
