"""Command-line interface: ``l1qr {fit,calibrate,path,simulate,diagnose}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then explicit flags; the merged configuration is logged and echoed
into every artifact.  Exit status is 0 on success, 1 for usage and input
errors and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataio
from .core import DataError, QuantileGrid, parse_quantiles
from .diagnostics import (BudgetExceeded, ar1_covariance, empirical_gram, max_sparse_eigenvalue,
                          min_sparse_eigenvalue, support_metrics)
from .estimators import (fit_l1_qr_process, hard_threshold, lambda_path, post_l1_qr,
                         selection_path)
from .lp import SolverError, verify_optimality
from .penalty import calibrate_penalty, theoretical_scale
from .simulation import DesignSpec, ExperimentConfig, run_experiment

logger = logging.getLogger("l1qr")

COMMANDS = ("fit", "calibrate", "path", "simulate", "diagnose")

DEFAULTS = {
    "input": None,
    "response": None,
    "intercept": True,
    "delimiter": ",",
    "exempt_intercept": False,
    "keep_intercept": False,
    "quantiles": "0.5",
    "alpha": 0.1,
    "c": 2.0,
    "R": 1000,
    "seed": 0,
    "lambda": None,
    "K": 5,
    "gamma": None,
    "dense": False,
    "discrete": False,
    "output": None,
    "format": "json",
    "threads": None,
    # simulate
    "n": 200,
    "p": 1000,
    "s": 5,
    "rho": 0.0,
    "sigma": 1.0,
    "reps": 100,
    "estimators": "canonical,penalized,post,oracle",
    "shared_lambda": False,
    # diagnose
    "k": "1,2,3",
    "mode": "exact",
    "ar1_p": None,
    "ar1_rho": None,
    "truth": None,
}

SIMULATE_DEFAULTS = {"c": 1.0}
EXECUTION_ONLY = ("output", "threads")
_DATA_KEYS = ("input", "response", "intercept", "delimiter", "exempt_intercept")
_PENALTY_KEYS = ("alpha", "c", "R", "seed", "lambda", "quantiles")
COMMAND_KEYS = {
    "fit": _DATA_KEYS + _PENALTY_KEYS + ("gamma", "dense", "keep_intercept", "format", "discrete"),
    "calibrate": _DATA_KEYS + _PENALTY_KEYS + ("discrete", "format"),
    "path": _DATA_KEYS + _PENALTY_KEYS + ("K", "keep_intercept", "format", "discrete"),
    "simulate": _PENALTY_KEYS + ("n", "p", "s", "rho", "sigma", "reps", "estimators",
                                 "shared_lambda"),
    "diagnose": _DATA_KEYS + _PENALTY_KEYS + ("k", "mode", "ar1_p", "ar1_rho", "truth", "discrete"),
}


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def grid(self) -> QuantileGrid:
        try:
            return parse_quantiles(str(self.values["quantiles"]))
        except ValueError as exc:
            raise UsageError(f"bad --quantiles: {exc}") from exc

    def echo(self) -> dict:
        # execution-only settings stay out so artifacts match across them
        keep = sorted(k for k in COMMAND_KEYS[self.command] if k not in EXECUTION_ONLY)
        return {"command": self.command, **{k: self.values[k] for k in keep}}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="l1qr", description="l1-penalized quantile regression toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", default=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("-o", "--output", default=S, help="output file (stdout if omitted)")
        p.add_argument("--format", choices=("json", "csv"), default=S)
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--threads", type=int, default=S)

    def data(p):
        p.add_argument("-i", "--input", default=S, help="CSV file with a header row")
        p.add_argument("-y", "--response", default=S, help="response column name or 0-based index")
        p.add_argument("--no-intercept", dest="intercept", action="store_false", default=S)
        p.add_argument("--delimiter", default=S)
        p.add_argument("--exempt-intercept", dest="exempt_intercept", action="store_true", default=S,
                       help="do not penalize the intercept")

    def penalty(p):
        p.add_argument("--alpha", type=float, default=S)
        p.add_argument("--c", type=float, default=S)
        p.add_argument("--R", type=int, default=S, help="number of simulation draws")
        p.add_argument("--lambda", dest="lambda", type=float, default=S, help="fixed penalty level")

    p = sub.add_parser("fit", help="penalized and post-selection fits over a quantile grid")
    common(p); data(p); penalty(p)
    p.add_argument("-q", "--quantiles", default=S, help="'lo:hi:step' or comma list")
    p.add_argument("--gamma", type=float, default=S, help="hard-threshold level")
    p.add_argument("--dense", action="store_true", default=S)
    p.add_argument("--keep-intercept", dest="keep_intercept", action="store_true", default=S)

    p = sub.add_parser("calibrate", help="simulate the pivotal penalty level")
    common(p); data(p); penalty(p)
    p.add_argument("-q", "--quantiles", default=S)
    p.add_argument("--discrete", action="store_true", default=S,
                   help="take the supremum over grid points only")

    p = sub.add_parser("path", help="selection path over lambda0 / k, k = 1..K")
    common(p); data(p); penalty(p)
    p.add_argument("-q", "--quantiles", default=S, help="a single quantile index")
    p.add_argument("--K", type=int, default=S)
    p.add_argument("--keep-intercept", dest="keep_intercept", action="store_true", default=S)

    p = sub.add_parser("simulate", help="Monte Carlo study on correlated normal designs")
    common(p); penalty(p)
    for name, typ in (("n", int), ("p", int), ("s", int), ("rho", float), ("sigma", float),
                      ("reps", int)):
        p.add_argument(f"--{name}", type=typ, default=S)
    p.add_argument("-q", "--quantiles", default=S, help="a single quantile index")
    p.add_argument("--estimators", default=S, help="comma list from canonical,penalized,post,oracle")
    p.add_argument("--shared-lambda", dest="shared_lambda", action="store_true", default=S,
                   help="calibrate once instead of per replication")

    p = sub.add_parser("diagnose", help="sparse eigenvalues and support diagnostics")
    common(p); data(p); penalty(p)
    p.add_argument("-q", "--quantiles", default=S)
    p.add_argument("--k", default=S, help="comma list of sparsity levels")
    p.add_argument("--mode", choices=("exact", "greedy"), default=S)
    p.add_argument("--ar1-p", dest="ar1_p", type=int, default=S)
    p.add_argument("--ar1-rho", dest="ar1_rho", type=float, default=S)
    p.add_argument("--truth", default=S, help="comma list of true support columns (names or indices)")
    return parser


def parse_config(argv) -> RunConfig:
    parser = _build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    if command is None:
        raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
    args.pop("verbose", None)
    values = dict(DEFAULTS)
    if command == "simulate":
        values.update(SIMULATE_DEFAULTS)
    cfg_path = args.pop("config", None)
    if cfg_path:
        try:
            loaded = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        loaded.pop("command", None)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    values.update(args)
    cfg = RunConfig(command, values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    v = cfg.values
    if cfg.command in ("fit", "calibrate", "path"):
        if not v["input"]:
            raise UsageError(f"{cfg.command}: --input is required")
        if v["response"] is None:
            raise UsageError(f"{cfg.command}: --response is required")
    if cfg.command == "diagnose" and not v["input"] and v["ar1_p"] is None:
        raise UsageError("diagnose: give --input or --ar1-p/--ar1-rho")
    if not 0 < float(v["alpha"]) < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if not float(v["c"]) > 0:
        raise UsageError("--c must be positive")
    if int(v["R"]) < 1:
        raise UsageError("--R must be at least 1")
    if v["lambda"] is not None and float(v["lambda"]) < 0:
        raise UsageError("--lambda must be nonnegative")
    if int(v["K"]) < 1:
        raise UsageError("--K must be at least 1")
    cfg.grid()


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except (UsageError, NumericalError):
        raise
    except (DataError, FileNotFoundError, ValueError, BudgetExceeded) as exc:
        raise UsageError(f"[{name}] {exc}") from exc
    except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericalError(f"[{name}] {exc}") from exc


def _load(cfg: RunConfig):
    with stage("load data"):
        return dataio.parse_csv_dataset(cfg.input, cfg.response, add_intercept=bool(cfg.intercept),
                                        delimiter=cfg.delimiter)


def _calibrate(cfg: RunConfig, d, grid):
    with stage("calibrate penalty"):
        return calibrate_penalty(d, grid, alpha=float(cfg.alpha), c=float(cfg.c), R=int(cfg.R),
                                 seed=int(cfg.seed), continuous=not cfg.discrete,
                                 threads=cfg.threads)


def _emit(cfg: RunConfig, text: str):
    if cfg.output:
        dataio.write_atomic(cfg.output, text)
    else:
        sys.stdout.write(text)


def cmd_fit(cfg: RunConfig) -> int:
    d = _load(cfg)
    grid = cfg.grid()
    cal = None
    if cfg.values["lambda"] is None:
        cal = _calibrate(cfg, d, grid)
        lam = cal.lambda0
    else:
        lam = float(cfg.values["lambda"])
    names = list(d.names)
    with stage("fit"):
        proc = fit_l1_qr_process(d, grid, lam, exempt_intercept=bool(cfg.exempt_intercept),
                                 threads=cfg.threads)
        entries = []
        for u in grid.points:
            f = proc[u]
            post = post_l1_qr(d, u, f, always_keep_intercept=bool(cfg.keep_intercept))
            rep = verify_optimality(f, d)
            th = hard_threshold(f, float(cfg.gamma)) if cfg.gamma is not None else None
            entry = {
                "u": u,
                "support": [names[j] for j in f.support],
                "coefficients": dataio.sparse_coefficients(f.beta, names),
                "post_coefficients": dataio.sparse_coefficients(post.beta_post, names),
                "empty_model": post.empty_model,
                "thresholded": dataio.sparse_coefficients(th, names) if th is not None else None,
                "primal_objective": f.primal_objective,
                "dual_objective": f.dual_objective,
                "duality_gap": rep.duality_gap,
                "complementary_slackness_ok": rep.complementary_slackness_ok,
                "n_interpolated": f.n_interpolated,
                "iterations": f.iterations,
                "perturbed": f.perturbed,
            }
            if cfg.dense:
                entry["beta"] = f.beta
                entry["beta_post"] = post.beta_post
                entry["dual_scores"] = f.dual_scores
            entries.append((entry, f, post, th))
    if cfg.format == "csv":
        rows = []
        for entry, f, post, th in entries:
            for j in range(d.p):
                if f.beta[j] != 0 or post.beta_post[j] != 0:
                    rows.append([entry["u"], names[j], f.beta[j], post.beta_post[j],
                                 None if th is None else th[j]])
        text = dataio.csv_text(["u", "column", "beta", "beta_post", "beta_thresholded"], rows)
    else:
        text = dataio.dumps_json({
            "command": "fit",
            "config": cfg.echo(),
            "lambda": lam,
            "calibration": cal.to_dict(include_samples=False) if cal else None,
            "union_support": [names[j] for j in proc.union_support],
            "max_support_size": proc.max_support_size,
            "fits": [e[0] for e in entries],
        })
    _emit(cfg, text)
    return 0


def cmd_calibrate(cfg: RunConfig) -> int:
    d = _load(cfg)
    grid = cfg.grid()
    cal = _calibrate(cfg, d, grid)
    if cfg.format == "csv":
        text = dataio.csv_text(["draw", "lambda"], list(enumerate(cal.lambda_samples)))
    else:
        text = dataio.dumps_json({"command": "calibrate", "config": cfg.echo(),
                                  "n": d.n, "p": d.p, **cal.to_dict()})
    _emit(cfg, text)
    return 0


def cmd_path(cfg: RunConfig) -> int:
    d = _load(cfg)
    grid = cfg.grid()
    if len(grid) != 1:
        raise UsageError("path: --quantiles must name a single quantile index")
    u = grid.points[0]
    cal = None
    if cfg.values["lambda"] is None:
        cal = _calibrate(cfg, d, grid)
        lam0 = cal.lambda0
    else:
        lam0 = float(cfg.values["lambda"])
        if lam0 <= 0:
            raise UsageError("path: --lambda must be positive")
    names = list(d.names)
    with stage("selection path"):
        steps = selection_path(d, u, lambda_path(lam0, int(cfg.K)),
                               exempt_intercept=bool(cfg.exempt_intercept),
                               always_keep_intercept=bool(cfg.keep_intercept))
    if cfg.format == "csv":
        rows = [[k + 1, s.lam, len(s.support), ";".join(names[j] for j in s.support)]
                for k, s in enumerate(steps)]
        text = dataio.csv_text(["step", "lambda", "n_selected", "selected"], rows)
    else:
        text = dataio.dumps_json({
            "command": "path",
            "config": cfg.echo(),
            "u": u,
            "lambda0": lam0,
            "calibration": cal.to_dict(include_samples=False) if cal else None,
            "steps": [{"step": k + 1, "lambda": s.lam,
                       "support": [names[j] for j in s.support],
                       "coefficients": dataio.sparse_coefficients(s.beta, names),
                       "post_coefficients": dataio.sparse_coefficients(s.post_beta, names)}
                      for k, s in enumerate(steps)],
        })
    _emit(cfg, text)
    return 0


def simulation_config(cfg: RunConfig) -> ExperimentConfig:
    grid = cfg.grid()
    if len(grid) != 1:
        raise UsageError("simulate: --quantiles must name a single quantile index")
    ests = tuple(e.strip() for e in str(cfg.estimators).split(",") if e.strip())
    with stage("configure experiment"):
        design = DesignSpec(n=int(cfg.n), p=int(cfg.p), s=int(cfg.s), rho=float(cfg.rho),
                            sigma_noise=float(cfg.sigma), seed=int(cfg.seed))
        lam = cfg.values["lambda"]
        return ExperimentConfig(design=design, u=grid.points[0], n_reps=int(cfg.reps),
                                alpha=float(cfg.alpha), c=float(cfg.c), R=int(cfg.R),
                                lam=None if lam is None else float(lam), estimators=ests,
                                master_seed=int(cfg.seed), shared_lambda=bool(cfg.shared_lambda),
                                threads=cfg.threads)


def write_experiment(report, output, echo: Optional[dict] = None) -> dict:
    """Write the JSON report and its companion CSV files; return their paths.

    ``output`` is the JSON path; siblings share its stem: ``.csv`` (one
    row per estimator), ``_support_hist.csv`` and ``_correct_hist.csv``
    (histogram plot data) and ``_timing.json`` (wall-clock figures, kept
    apart so the other artifacts are reproducible byte for byte).
    """
    out = Path(output)
    stem = out.with_suffix("")
    paths = {"json": out, "csv": stem.with_suffix(".csv"),
             "support_hist": Path(f"{stem}_support_hist.csv"),
             "correct_hist": Path(f"{stem}_correct_hist.csv"),
             "timing": Path(f"{stem}_timing.json")}
    doc = report.to_dict()
    if echo is not None:
        doc = {"command": "simulate", "effective_config": echo, **doc}
    dataio.write_json(paths["json"], doc)
    order = report.config.ordered_estimators()
    rows = []
    for name in order:
        s = report.estimators[name]
        rows.append([name, s.mean_l0, s.mean_l1, s.bias, s.std_dev, s.inclusion_frequency,
                     s.n_ok, s.mean_l0_all_columns])
    dataio.write_csv(paths["csv"], ["estimator", "mean_l0", "mean_l1", "bias", "std_dev",
                                    "inclusion_frequency", "n_ok", "mean_l0_all_columns"], rows)
    for key, attr in (("support_hist", "support_histogram"),
                      ("correct_hist", "correct_selected_histogram")):
        hist_rows = [[name, b, c] for name in order for b, c in getattr(report.estimators[name], attr)]
        dataio.write_csv(paths[key], ["estimator", "bin", "count"], hist_rows)
    dataio.write_json(paths["timing"], report.timing())
    return paths


def cmd_simulate(cfg: RunConfig) -> int:
    ecfg = simulation_config(cfg)
    with stage("simulate"):
        report = run_experiment(ecfg)
    if cfg.output:
        write_experiment(report, cfg.output, echo=cfg.echo())
    else:
        sys.stdout.write(dataio.dumps_json({"command": "simulate", "effective_config": cfg.echo(),
                                            **report.to_dict()}))
    return 0


def _int_list(text) -> list:
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma list of integers, got {text!r}") from exc


def cmd_diagnose(cfg: RunConfig) -> int:
    doc = {"command": "diagnose", "config": cfg.echo()}
    d = None
    if cfg.input:
        d = _load(cfg)
        M, kind = empirical_gram(d), "empirical"
    else:
        if cfg.ar1_rho is None:
            raise UsageError("diagnose: --ar1-rho is required with --ar1-p")
        M, kind = ar1_covariance(int(cfg.ar1_p), float(cfg.ar1_rho)), "supplied"
    ks = _int_list(cfg.k)
    eig = []
    with stage("sparse eigenvalues"):
        for k in ks:
            if not 1 <= k <= M.shape[0]:
                raise UsageError(f"k={k} outside [1, {M.shape[0]}]")
            hi = max_sparse_eigenvalue(M, k, cfg.mode, kind)
            lo = min_sparse_eigenvalue(M, k, cfg.mode, kind)
            eig.append({"k": k, "max": hi.value, "max_mode": hi.mode,
                        "min": lo.value, "min_mode": lo.mode})
    doc["matrix_kind"] = kind
    doc["sparse_eigenvalues"] = eig
    if d is not None:
        grid = cfg.grid()
        cal = _calibrate(cfg, d, grid)
        doc["calibration"] = cal.to_dict(include_samples=False)
        if d.p >= 2 and d.n >= 2:
            doc["lambda_quantile_over_theoretical_scale"] = (
                cal.lambda0 / cal.c / theoretical_scale(d.n, d.p, grid))
        if cfg.truth is not None:
            names = list(d.names)
            truth = []
            for tok in str(cfg.truth).split(","):
                tok = tok.strip()
                if not tok:
                    continue
                if tok in names:
                    truth.append(names.index(tok))
                elif tok.isdigit() and int(tok) < d.p:
                    truth.append(int(tok))
                else:
                    raise UsageError(f"unknown truth column {tok!r}")
            lam = cal.lambda0 if cfg.values["lambda"] is None else float(cfg.values["lambda"])
            with stage("support diagnostics"):
                proc = fit_l1_qr_process(d, grid, lam, exempt_intercept=bool(cfg.exempt_intercept))
            doc["support"] = []
            for u in grid.points:
                m = support_metrics(proc[u].beta, truth, tol=0.0)
                doc["support"].append({"u": u, "true_support": [names[j] for j in m.true_support],
                                       "est_support": [names[j] for j in m.est_support],
                                       "n_selected": m.n_selected, "n_correct": m.n_correct,
                                       "n_wrong": m.n_wrong, "includes_truth": m.includes_truth,
                                       "exact": m.exact})
    _emit(cfg, dataio.dumps_json(doc))
    return 0


HANDLERS = {"fit": cmd_fit, "calibrate": cmd_calibrate, "path": cmd_path,
            "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
        logger.info("effective config: %s", json.dumps(cfg.echo(), sort_keys=True))
        return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"l1qr: usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"l1qr: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
