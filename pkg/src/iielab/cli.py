"""Command-line surface: dataset estimation, sensitivity bounds, simulation
tables, the convergence experiment, and the exact-verification battery.

All randomness flows from one root seed through named stream derivation, and
identical (config, seed) pairs produce byte-identical CSV outputs.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import os
import sys
import time

import numpy as np
import pandas as pd

from . import __version__
from .core import Estimand, PositivityError, ScaleError
from .estimators import dr_learner, dr_learner_bounds, one_step, one_step_bounds, projection_estimate
from .nuisance import BasisSpec, NuisanceLearner
from .sensitivity import SensitivityAssumption
from .simlab import Dgp, TableConfig, run_convergence, run_table, table1_frame, table2_frame
from .exact import run_battery
from .validation import SchemaError, load_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REPFAIL = 3
EXIT_POSITIVITY = 4
EXIT_VERIFY = 5


class CliError(Exception):
    def __init__(self, code, error_id, message):
        super().__init__(message)
        self.code = code
        self.error_id = error_id


DEFAULT_CONFIG = {
    "data": {"path": ""},
    "estimator": {
        "seed": "0", "folds": "2", "fold_mode": "swap-average",
        "basis": "polynomial", "degree": "3", "projection": "linear",
        "query_points": "0,2", "arm": "1", "arm_prime": "0",
    },
    "sensitivity": {"assumption": "A2", "tau_grid": "0,0.01,0.02,0.05,0.1"},
    "simulate": {
        "n": "1000", "reps": "500", "points": "0,2",
        "estimators": "plugin-linear,plugin-quadratic,efficient-linear,"
                      "efficient-quadratic,dr-learner,plugin-smoother",
        "conv_n_grid": "500,1000,2000,4000,8000,16000",
        "conv_reps": "200",
        "conv_panels": "all-fast,slow-propensity,slow-outcome,slow-mediator",
    },
    "verify": {
        "problems": "20", "grid_sizes": "2,3,5", "perturbation": "0.2",
        "tol": "1e-10", "corrupt_term": "",
    },
}


class RunConfig:
    """Structured text configuration with lossless on-disk round-trips."""

    SECTIONS = ("data", "estimator", "sensitivity", "simulate", "verify")

    def __init__(self, sections=None):
        self.sections = {name: dict(DEFAULT_CONFIG[name]) for name in self.SECTIONS}
        for name, kv in (sections or {}).items():
            if name not in self.sections:
                raise CliError(EXIT_CONFIG, "config-invalid", f"unknown section [{name}]")
            self.sections[name].update(kv)

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise CliError(EXIT_CONFIG, "config-invalid", f"cannot read config {path}")
        return cls({s: dict(parser.items(s)) for s in parser.sections()})

    def apply_overrides(self, pairs):
        for pair in pairs or []:
            if "=" not in pair or "." not in pair.split("=", 1)[0]:
                raise CliError(EXIT_CONFIG, "config-invalid",
                               f"override must look like section.key=value: {pair!r}")
            key, value = pair.split("=", 1)
            section, name = key.split(".", 1)
            if section not in self.sections:
                raise CliError(EXIT_CONFIG, "config-invalid", f"unknown section [{section}]")
            self.sections[section][name.strip()] = value.strip()
        return self

    def write(self, path):
        parser = configparser.ConfigParser()
        for name in self.SECTIONS:
            parser[name] = self.sections[name]
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)

    def canonical(self):
        buf = io.StringIO()
        for name in self.SECTIONS:
            buf.write(f"[{name}]\n")
            for key in sorted(self.sections[name]):
                buf.write(f"{key}={self.sections[name][key]}\n")
        return buf.getvalue()

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def get(self, section, key):
        return self.sections[section][key]

    def get_int(self, section, key):
        try:
            return int(self.sections[section][key])
        except ValueError as err:
            raise CliError(EXIT_CONFIG, "config-invalid",
                           f"{section}.{key} must be an integer") from err

    def get_float(self, section, key):
        try:
            return float(self.sections[section][key])
        except ValueError as err:
            raise CliError(EXIT_CONFIG, "config-invalid",
                           f"{section}.{key} must be a number") from err

    def get_floats(self, section, key):
        raw = self.sections[section][key]
        try:
            return [float(tok) for tok in raw.split(",") if tok.strip() != ""]
        except ValueError as err:
            raise CliError(EXIT_CONFIG, "config-invalid",
                           f"{section}.{key} must be a comma list of numbers") from err

    def get_list(self, section, key):
        return [tok.strip() for tok in self.sections[section][key].split(",") if tok.strip()]


def _write_csv(frame, path):
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


def _manifest(outdir, cfg, seed, started, command):
    manifest = {
        "version": __version__,
        "seed": seed,
        "config_hash": cfg.hash(),
        "wall_time_s": round(time.time() - started, 3),
        "command": command,
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("IIE_THREADS")
    return int(env) if env else 1


def _basis_from_config(cfg):
    return BasisSpec(kind=cfg.get("estimator", "basis"),
                     degree=cfg.get_int("estimator", "degree"))


def cmd_simulate(args, cfg):
    started = time.time()
    reps = cfg.get_int("simulate", "reps")
    if reps <= 0:
        raise CliError(EXIT_CONFIG, "config-invalid", "simulate.reps must be positive")
    seed = cfg.get_int("estimator", "seed")
    table_cfg = TableConfig(
        estimators=tuple(cfg.get_list("simulate", "estimators")),
        points=tuple(cfg.get_floats("simulate", "points")),
        n=cfg.get_int("simulate", "n"),
        reps=reps,
        seed=seed,
        folds=cfg.get_int("estimator", "folds"),
        fold_mode=cfg.get("estimator", "fold_mode"),
        basis=_basis_from_config(cfg),
    )
    from .simlab import ReplicationFailureCap

    try:
        report = run_table(table_cfg, n_jobs=_threads(args))
    except ReplicationFailureCap as err:
        raise CliError(EXIT_REPFAIL, "replication-cap", str(err)) from err
    os.makedirs(args.out, exist_ok=True)
    t1 = table1_frame(report)
    t2 = table2_frame(report)
    if len(t1):
        _write_csv(t1, os.path.join(args.out, "table1.csv"))
    if len(t2):
        _write_csv(t2, os.path.join(args.out, "table2.csv"))
    summary = {"failures": len(report.failures), "reps": report.reps,
               "cells": report.rows}
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    _manifest(args.out, cfg, seed, started, "simulate")
    return EXIT_OK


def _load_data_or_fail(args):
    try:
        return load_dataset(args.data)
    except SchemaError as err:
        raise CliError(EXIT_CONFIG, "schema", str(err)) from err
    except FileNotFoundError as err:
        raise CliError(EXIT_CONFIG, "config-invalid", f"data file not found: {args.data}") from err


def cmd_estimate(args, cfg):
    started = time.time()
    data = _load_data_or_fail(args)
    seed = cfg.get_int("estimator", "seed")
    points = cfg.get_floats("estimator", "query_points")
    folds = cfg.get_int("estimator", "folds")
    mode = cfg.get("estimator", "fold_mode")
    basis = cfg.get("estimator", "projection")
    learner = NuisanceLearner(basis=_basis_from_config(cfg))
    rows = []
    try:
        plan_learner = NuisanceLearner(basis=_basis_from_config(cfg))
        fitted_eta = plan_learner.fit(data).nuisance_set()
        avg = one_step(data, fitted_eta, Estimand.PSI_M1)
        rows.append({"estimator": "one-step", "estimand": "psi_m1", "point": "",
                     "estimate": avg.estimate, "se": avg.se,
                     "ci_lower": avg.ci_lower, "ci_upper": avg.ci_upper})
        proj = projection_estimate(data, learner, points, basis=basis, k=folds,
                                   mode=mode, seed=seed)
        for rep in proj:
            rows.append({"estimator": f"projection-{basis}", "estimand": "psi_m1",
                         "point": rep.point, "estimate": rep.estimate, "se": rep.se,
                         "ci_lower": rep.ci_lower, "ci_upper": rep.ci_upper})
        drs = dr_learner(data, learner, points, k=folds, mode=mode, seed=seed)
        for rep in drs:
            rows.append({"estimator": "dr-learner", "estimand": "psi_m1",
                         "point": rep.point, "estimate": rep.estimate, "se": rep.se,
                         "ci_lower": rep.ci_lower, "ci_upper": rep.ci_upper})
    except PositivityError as err:
        raise CliError(EXIT_POSITIVITY, "positivity", str(err)) from err
    os.makedirs(args.out, exist_ok=True)
    _write_csv(pd.DataFrame(rows), os.path.join(args.out, "estimates.csv"))
    _manifest(args.out, cfg, seed, started, "estimate")
    return EXIT_OK


def cmd_bounds(args, cfg):
    started = time.time()
    data = _load_data_or_fail(args)
    seed = cfg.get_int("estimator", "seed")
    folds = cfg.get_int("estimator", "folds")
    mode = cfg.get("estimator", "fold_mode")
    points = cfg.get_floats("estimator", "query_points")
    kind = cfg.get("sensitivity", "assumption")
    taus = cfg.get_floats("sensitivity", "tau_grid")
    if kind == "A2" and (data.y.min() < 0.0 or data.y.max() > 1.0):
        raise CliError(EXIT_CONFIG, "scale",
                       "assumption A2 requires the outcome rescaled to [0, 1]")
    learner = NuisanceLearner(basis=_basis_from_config(cfg))
    eta = learner.fit(data).nuisance_set()
    avg_rows, curve_rows = [], []
    robustness_tau = None
    try:
        for tau in taus:
            sa = SensitivityAssumption(kind, tau)
            rep_lb, rep_ub = one_step_bounds(data, eta, sa)
            avg_rows.append({
                "tau": tau, "lb": rep_lb.estimate, "lb_se": rep_lb.se,
                "lb_ci_lower": rep_lb.ci_lower, "ub": rep_ub.estimate,
                "ub_se": rep_ub.se, "ub_ci_upper": rep_ub.ci_upper,
            })
            if robustness_tau is None and rep_lb.ci_lower <= 0.0 <= rep_ub.ci_upper:
                robustness_tau = tau
            lbs, ubs = dr_learner_bounds(data, learner, sa, points, k=folds,
                                         mode=mode, seed=seed)
            for lo, hi in zip(lbs, ubs):
                curve_rows.append({
                    "tau": tau, "v": lo.point, "lb": lo.estimate, "lb_se": lo.se,
                    "lb_ci_lower": lo.ci_lower, "ub": hi.estimate, "ub_se": hi.se,
                    "ub_ci_upper": hi.ci_upper,
                })
    except ScaleError as err:
        raise CliError(EXIT_CONFIG, "scale", str(err)) from err
    except PositivityError as err:
        raise CliError(EXIT_POSITIVITY, "positivity", str(err)) from err
    os.makedirs(args.out, exist_ok=True)
    _write_csv(pd.DataFrame(avg_rows), os.path.join(args.out, "bounds_average.csv"))
    _write_csv(pd.DataFrame(curve_rows), os.path.join(args.out, "bounds_curves.csv"))
    summary = {"robustness_tau": robustness_tau, "assumption": kind}
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(args.out, cfg, seed, started, "bounds")
    return EXIT_OK


def cmd_verify(args, cfg):
    started = time.time()
    seed = cfg.get_int("estimator", "seed")
    corrupt = cfg.get("verify", "corrupt_term") or None
    rows = run_battery(
        seed=seed,
        n_problems=cfg.get_int("verify", "problems"),
        grid_sizes=tuple(int(g) for g in cfg.get_floats("verify", "grid_sizes")),
        perturbation=cfg.get_float("verify", "perturbation"),
        tol=cfg.get_float("verify", "tol"),
        corrupt_term=corrupt,
    )
    os.makedirs(args.out, exist_ok=True)
    frame = pd.DataFrame(rows)
    _write_csv(frame, os.path.join(args.out, "audit.csv"))
    with open(os.path.join(args.out, "audit.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    _manifest(args.out, cfg, seed, started, "verify")
    failed = frame[(~frame["passed"]) & (frame["variant"] != "benkeser-ran")]
    if len(failed):
        first = failed.iloc[0]
        raise CliError(EXIT_VERIFY, "verify-residual",
                       f"residual check failed for {first['variant']}"
                       f" (term {first['term'] or 'unknown'})")
    return EXIT_OK


def cmd_convergence(args, cfg):
    started = time.time()
    seed = cfg.get_int("estimator", "seed")
    from .simlab import CONVERGENCE_PANELS

    panel_names = cfg.get_list("simulate", "conv_panels")
    unknown = [p for p in panel_names if p not in CONVERGENCE_PANELS]
    if unknown:
        raise CliError(EXIT_CONFIG, "config-invalid", f"unknown panels {unknown}")
    panels = {name: CONVERGENCE_PANELS[name] for name in panel_names}
    frame = run_convergence(
        n_grid=tuple(int(n) for n in cfg.get_floats("simulate", "conv_n_grid")),
        reps=cfg.get_int("simulate", "conv_reps"),
        seed=seed,
        panels=panels,
        n_jobs=_threads(args),
    )
    os.makedirs(args.out, exist_ok=True)
    _write_csv(frame[["panel", "n", "estimator", "scaled_rmse"]],
               os.path.join(args.out, "convergence.csv"))
    _manifest(args.out, cfg, seed, started, "convergence")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="iielab",
        description="Interventional indirect effects: estimation, bounds, "
                    "simulation, and exact verification.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_data=False):
        if needs_data:
            p.add_argument("--data", required=True, help="dataset CSV (y,a,m1,m2,x1[,x2,...])")
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="config override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker pool size (falls back to IIE_THREADS)")

    common(sub.add_parser("simulate", help="Monte-Carlo performance tables"))
    common(sub.add_parser("estimate", help="estimate effects on a dataset"), needs_data=True)
    common(sub.add_parser("bounds", help="sensitivity bounds over a tau grid"), needs_data=True)
    common(sub.add_parser("verify", help="exact-enumeration verification battery"))
    common(sub.add_parser("convergence", help="convergence-rate experiment"))
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "bounds": cmd_bounds,
    "verify": cmd_verify,
    "convergence": cmd_convergence,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        cfg.apply_overrides(args.overrides)
        return _COMMANDS[args.command](args, cfg)
    except CliError as err:
        print(f"IIE_ERR[{err.error_id}] {err}", file=sys.stderr)
        return err.code
    except ScaleError as err:
        print(f"IIE_ERR[scale] {err}", file=sys.stderr)
        return EXIT_CONFIG
    except PositivityError as err:
        print(f"IIE_ERR[positivity] {err}", file=sys.stderr)
        return EXIT_POSITIVITY


if __name__ == "__main__":
    sys.exit(main())
