"""Command-line front end.

Commands
--------
simulate     one trajectory to CSV (deterministic for a fixed seed)
certify      fit/refute a coefficient certificate, JSON output
experiment   run one named experiment, write JSON/CSV/figures + manifest
suite        run a pinned bundle of experiments with expected verdicts

Configuration comes from a versioned JSON file (``--config``), with flags
overriding individual fields and the JUMPSDE_SEED environment variable as
the weakest seed source.  Unknown config keys are rejected with the field
path.  Exit codes: 0 all PASS, 1 config error, 2 any FAIL, 3 INCONCLUSIVE,
4 runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .coefficients import (CertificateRefuted, build_gauge, build_model,
                           check_growth_assumption, check_jump_homeomorphism,
                           check_log_lipschitz, identity_jump_certificate,
                           linear_jump_certificate)
from .integrator import SchemeConfig, simulate
from .noise import ScenarioSeed, sample_noise
from . import propertylab as lab
from .reporting import write_manifest, write_report

__all__ = ["main", "run_config", "ConfigError", "SUITES"]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Schema violation; message carries the offending field path."""


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_TOP_KEYS = {"version", "command", "seed", "workers", "out",
             "simulate", "certify", "experiment", "suite"}
_SECTION_KEYS = {
    "simulate": {"model", "x0", "T", "dt", "scheme", "r_explode"},
    "certify": {"model", "assumption", "N", "gauge", "inverse"},
    "experiment": {"name", "model", "model2", "paths", "T", "dt", "x0",
                   "p", "dt_ladder", "delta_ladder", "tolerances", "gauge",
                   "R_inner", "order_target", "order_tol", "x", "y",
                   "inverse", "scheme", "r_explode"},
    "suite": {"name", "paths", "T", "dt"},
}
_COMMANDS = ("simulate", "certify", "experiment", "suite")

_ASSUMPTION_ALIASES = {
    "growth": "growth", "2.1": "growth",
    "log-lipschitz": "log-lipschitz", "log_lipschitz": "log-lipschitz",
    "3.1": "log-lipschitz",
    "jump-invertibility": "jump-invertibility", "4.1": "jump-invertibility",
}


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"version: expected {CONFIG_VERSION}, got {version}")
    command = cfg.get("command")
    if command not in _COMMANDS:
        raise ConfigError(f"command: must be one of {_COMMANDS}, "
                          f"got {command!r}")
    for key, typ in (("seed", int), ("workers", int), ("out", str)):
        if key in cfg and not isinstance(cfg[key], typ):
            raise ConfigError(f"{key}: expected {typ.__name__}")
    section = cfg.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"{command}: must be an object")
    bad = set(section) - _SECTION_KEYS[command]
    if bad:
        raise ConfigError(f"{command}.{sorted(bad)[0]}: unknown key")
    for other in _COMMANDS:
        if other != command and other in cfg:
            raise ConfigError(f"{other}: section does not match command "
                              f"{command!r}")
    return cfg


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
            f"{exc.msg}") from None


# ---------------------------------------------------------------------------
# Fixtures: canonical model specs used by experiments and suites
# ---------------------------------------------------------------------------

def _fix_log_full():
    return {"builtin": "log_model", "jump": "linear",
            "marks": {"distribution": "uniform_interval",
                      "params": [-0.5, 0.5], "total_mass": 1.0}}


def _fix_log_drift_only():
    return {"builtin": "log_model", "jump": "none", "diffusion": False}


def _fix_log_drift_jump():
    # invertible linear jumps on the pure-drift log model: the non-contact
    # fixture (the diffusion coefficient has a degenerate point at |x| = 1
    # where coupled paths contract below any floor, so it stays off here)
    return {"builtin": "log_model", "jump": "linear", "diffusion": False,
            "marks": {"distribution": "uniform_interval",
                      "params": [-0.5, 0.5], "total_mass": 1.0}}


def _fix_log_diffusion_order():
    # strong-order fixture away from the |x|=1 degeneracy; plain Euler
    # (taming saturates at this drift magnitude and masks the order)
    return {"builtin": "log_model", "jump": "linear",
            "marks": {"distribution": "uniform_interval",
                      "params": [-0.2, 0.2], "total_mass": 1.0}}


def _fix_log_bounded_jump():
    return {"builtin": "log_model", "jump": "bounded",
            "marks": {"distribution": "uniform_interval",
                      "params": [-0.5, 0.5], "total_mass": 1.0}}


def _fix_log_monotone_jump(shift=0.0):
    return {"builtin": "log_model", "jump": "linear", "drift_shift": shift,
            "marks": {"distribution": "uniform_interval",
                      "params": [0.0, 0.5], "total_mass": 1.0}}


def _fix_cutoff_log(R=4.0):
    return {"cutoff": {"base": _fix_log_full(), "R": R}}


DEFAULT_MODELS = {
    "nonexplosion": _fix_log_full,
    "escape": _fix_log_bounded_jump,
    "uniqueness": _fix_log_diffusion_order,
    "comparison": lambda: _fix_log_monotone_jump(0.0),
    "noncontact": _fix_log_drift_jump,
    "flow_continuity": _fix_cutoff_log,
    "sup_moment": _fix_cutoff_log,
}


def _experiment_config(section: dict, seed: int, workers: int,
                       defaults: dict) -> lab.ExperimentConfig:
    name = section["name"]
    model = section.get("model")
    if model is None:
        model = DEFAULT_MODELS[name]() if name in DEFAULT_MODELS else None
    merged = dict(defaults)
    merged.update({k: v for k, v in section.items()
                   if k in ("paths", "T", "dt", "x0", "p", "dt_ladder",
                            "delta_ladder", "tolerances", "scheme",
                            "r_explode")})
    return lab.ExperimentConfig(model=model, master_seed=seed,
                                workers=workers, **merged)


def _infer_order_target(model_spec) -> float:
    model = build_model(model_spec)
    probe = np.asarray([[1.5] + [0.0] * (model.dimension - 1)])
    g = model.diffusion(probe)
    return 2.0 if float(np.max(np.abs(g))) == 0.0 else 1.0


def run_experiment(section: dict, seed: int, workers: int
                   ) -> lab.ExperimentReport:
    name = section.get("name")
    if name == "nonexplosion":
        cfg = _experiment_config(section, seed, workers,
                                 {"paths": 1000, "T": 1.0, "dt": 1e-3,
                                  "x0": (1.5,)})
        return lab.nonexplosion_experiment(cfg, gauge=section.get("gauge",
                                                                  "log"))
    if name == "escape":
        cfg = _experiment_config(section, seed, workers,
                                 {"paths": 1000, "T": 1.0, "dt": 1e-3,
                                  "x0": (4.0, 8.0, 16.0, 32.0)})
        return lab.escape_experiment(cfg, R_inner=float(
            section.get("R_inner", 1.0)))
    if name == "uniqueness":
        cfg = _experiment_config(section, seed, workers,
                                 {"paths": 1000, "T": 0.125, "dt": 1e-3,
                                  "x0": (20.0,), "scheme": "euler",
                                  "r_explode": 1e9,
                                  "dt_ladder": tuple(2.0 ** (-k)
                                                     for k in range(8, 13))})
        target = section.get("order_target")
        if target is None:
            target = _infer_order_target(cfg.model_spec())
        return lab.uniqueness_experiment(cfg, order_target=float(target),
                                         order_tol=float(
                                             section.get("order_tol", 0.3)))
    if name == "comparison":
        model1 = section.get("model") or _fix_log_monotone_jump(1.0)
        model2 = section.get("model2") or _fix_log_monotone_jump(0.0)
        sec = dict(section)
        sec["model"] = model1
        cfg = _experiment_config(sec, seed, workers,
                                 {"paths": 1000, "T": 1.0, "dt": 1e-3,
                                  "x0": (1.4, 1.5)})
        return lab.comparison_experiment(cfg, model1, model2)
    if name == "noncontact":
        cfg = _experiment_config(section, seed, workers,
                                 {"paths": 1000, "T": 1.0, "dt": 1e-3})
        model = build_model(cfg.model_spec())
        cert = None
        inverse = section.get("inverse", "auto")
        if inverse in ("auto", "linear") and model.has_jumps:
            try:
                cert = linear_jump_certificate(model.marks)
            except ValueError:
                cert = None
        elif inverse == "identity":
            cert = identity_jump_certificate()
        x = section.get("x", [1.5])
        y = section.get("y", [2.5])
        return lab.noncontact_experiment(cfg, x, y, cert=cert)
    if name == "flow_continuity":
        cfg = _experiment_config(section, seed, workers,
                                 {"paths": 1000, "T": 1.0, "dt": 1e-3,
                                  "x0": (1.5,),
                                  "delta_ladder": tuple(2.0 ** (-k)
                                                        for k in range(3, 9)),
                                  "p": 3.0})
        return lab.flow_continuity_experiment(cfg, p=cfg.p)
    if name == "sup_moment":
        cfg = _experiment_config(section, seed, workers,
                                 {"paths": 1000, "T": 1.0, "dt": 1e-3,
                                  "x0": (1.5,), "p": 4.0})
        return lab.sup_moment_experiment(cfg, p=cfg.p)
    if name == "lyapunov_gadgets":
        return lab.lyapunov_gadget_experiment(master_seed=seed)
    raise ConfigError(f"experiment.name: unknown experiment {name!r}")


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def _suite_counterexamples(paths: int) -> list[dict]:
    return [
        {"entry": "comparison_double_flip", "expected": "FAIL",
         "section": {"name": "comparison",
                     "model": {"builtin": "pure_jump_double_flip"},
                     "model2": {"builtin": "pure_jump_double_flip"},
                     "paths": paths, "T": 1.0, "dt": 1e-2,
                     "x0": (-1.0, 1.0)}},
        {"entry": "noncontact_flip", "expected": "FAIL",
         "section": {"name": "noncontact",
                     "model": {"builtin": "pure_jump_flip"},
                     "paths": paths, "T": 1.0, "dt": 1e-2,
                     "x": [2.0], "y": [3.0], "inverse": "identity"}},
        {"entry": "escape_flip", "expected": "FAIL",
         "section": {"name": "escape",
                     "model": {"builtin": "pure_jump_flip"},
                     "paths": paths, "T": 1.0, "dt": 1e-2,
                     "x0": (4.0, 8.0, 16.0, 32.0)}},
    ]


def _suite_theorems(paths: int) -> list[dict]:
    return [
        {"entry": "lyapunov_gadgets", "expected": "PASS",
         "section": {"name": "lyapunov_gadgets"}},
        {"entry": "nonexplosion_log", "expected": "PASS",
         "section": {"name": "nonexplosion", "model": _fix_log_full(),
                     "paths": paths, "T": 1.0, "dt": 1e-3, "x0": (1.5,)}},
        {"entry": "explosion_quadratic", "expected": "FAIL",
         "section": {"name": "nonexplosion",
                     "model": {"builtin": "quadratic_drift"},
                     "paths": max(100, paths // 4), "T": 1.1, "dt": 1e-3,
                     "x0": (1.0,), "scheme": "euler"}},
        {"entry": "uniqueness_drift", "expected": "PASS",
         "section": {"name": "uniqueness", "model": _fix_log_drift_only(),
                     "paths": 128, "order_target": 2.0,
                     "dt_ladder": tuple(2.0 ** (-k) for k in range(8, 13))}},
        {"entry": "uniqueness_diffusion", "expected": "PASS",
         "section": {"name": "uniqueness", "model": _fix_log_full(),
                     "paths": paths, "order_target": 1.0,
                     "dt_ladder": tuple(2.0 ** (-k) for k in range(8, 13))}},
        {"entry": "comparison_log", "expected": "PASS",
         "section": {"name": "comparison", "paths": paths}},
        {"entry": "noncontact_log", "expected": "PASS",
         "section": {"name": "noncontact", "model": _fix_log_full(),
                     "paths": paths}},
        {"entry": "escape_bounded_log", "expected": "PASS",
         "section": {"name": "escape", "model": _fix_log_bounded_jump(),
                     "paths": paths}},
        {"entry": "flow_cutoff_log", "expected": "PASS",
         "section": {"name": "flow_continuity", "paths": paths}},
        {"entry": "sup_moment_cutoff_log", "expected": "PASS",
         "section": {"name": "sup_moment", "paths": paths}},
    ]


SUITES = {
    "paper_counterexamples": _suite_counterexamples,
    "counterexamples": _suite_counterexamples,
    "paper_theorems": _suite_theorems,
    "theorems": _suite_theorems,
}


def run_suite(section: dict, seed: int, workers: int, outdir: Path
              ) -> tuple[str, list, list[Path]]:
    name = section.get("name")
    if name not in SUITES:
        raise ConfigError(f"suite.name: unknown suite {name!r}; "
                          f"known: {sorted(SUITES)}")
    paths = int(section.get("paths", 2000))
    entries = SUITES[name](paths)
    results = []
    files: list[Path] = []
    for entry in entries:
        report = run_experiment(entry["section"], seed, workers)
        ok = report.verdict == entry["expected"]
        results.append({"entry": entry["entry"], "expected": entry["expected"],
                        "verdict": report.verdict, "as_expected": ok})
        files += write_report(report, outdir, basename=entry["entry"])
        line = "as expected" if ok else "UNEXPECTED"
        print(f"  {entry['entry']}: {report.verdict} "
              f"(expected {entry['expected']}) -- {line}")
    suite_verdict = "PASS" if all(r["as_expected"] for r in results) else "FAIL"
    return suite_verdict, results, files


# ---------------------------------------------------------------------------
# Command runners
# ---------------------------------------------------------------------------

def _cmd_simulate(section: dict, seed: int, outdir: Path) -> int:
    model = build_model(section.get("model", "log_model"))
    x0 = section.get("x0", [1.5])
    if isinstance(x0, (int, float)):
        x0 = [x0]
    T = float(section.get("T", 1.0))
    dt = float(section.get("dt", 1e-3))
    cfg = SchemeConfig(scheme=section.get("scheme", "tamed_euler"),
                       r_explode=float(section.get("r_explode", 1e6)))
    noise = sample_noise(ScenarioSeed(seed, 0), T, dt, model.marks,
                         model.brownian_dim)
    traj = simulate(model, x0, noise, cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "trajectory.csv"
    traj.to_csv(csv_path)
    print(f"wrote {csv_path} ({len(traj.times)} rows, "
          f"exploded={traj.exploded})")
    return 0 if not traj.exploded else 2


def _cmd_certify(section: dict, seed: int, outdir: Path) -> tuple[int, dict]:
    model = build_model(section.get("model", "log_model"))
    raw = str(section.get("assumption", "log-lipschitz"))
    kind = _ASSUMPTION_ALIASES.get(raw)
    if kind is None:
        raise ConfigError(f"certify.assumption: unknown {raw!r}; use one of "
                          f"{sorted(set(_ASSUMPTION_ALIASES))}")
    if kind == "growth":
        gauge = build_gauge(section.get("gauge", "log"))
        rep = check_growth_assumption(model, gauge)
        payload = {"assumption": "growth", "passed": rep.passed,
                   "fitted_C": rep.fitted_C, "tail_slopes": rep.slopes,
                   "witness": rep.witness, "model": model.name,
                   "dimension": rep.dimension}
        code = 0 if rep.passed else 2
    elif kind == "log-lipschitz":
        n_list = section.get("N", [10, 100, 1000])
        try:
            cert = check_log_lipschitz(model, N_list=tuple(int(n)
                                                           for n in n_list),
                                       seed=seed)
            payload = {"assumption": "log-lipschitz", "passed": True,
                       "C": cert.C, "sigma": cert.sigma, "K": cert.K,
                       "C_of_p": {str(k): v for k, v in cert.C_of_p.items()},
                       "per_N": {str(k): v for k, v in cert.per_N.items()},
                       "dimension": cert.dimension, "model": model.name}
            code = 0
        except CertificateRefuted as exc:
            payload = {"assumption": "log-lipschitz", "passed": False,
                       "witnesses": exc.witnesses, "model": model.name,
                       "reason": str(exc)}
            code = 2
    else:
        inverse = section.get("inverse", "linear" if model.has_jumps
                              else "identity")
        if inverse == "linear":
            try:
                cert = linear_jump_certificate(model.marks)
            except ValueError as exc:
                cert = identity_jump_certificate()
                inverse = f"identity (linear unavailable: {exc})"
        else:
            cert = identity_jump_certificate()
        rep = check_jump_homeomorphism(model, cert, seed=seed)
        payload = {"assumption": "jump-invertibility", "passed": rep.passed,
                   "inverse": inverse, "K_inv": rep.K_inv,
                   "max_roundtrip_error": rep.max_roundtrip_error,
                   "max_lipschitz_ratio": rep.max_lipschitz_ratio,
                   "max_growth_ratio": rep.max_growth_ratio,
                   "witness": rep.witness, "model": model.name}
        code = 0 if rep.passed else 2
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "certificate.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2,
                               default=float) + "\n")
    print(f"wrote {path} (passed={payload['passed']})")
    return code, payload


def run_config(cfg: dict) -> int:
    """Execute a validated run config; returns the exit code."""
    cfg = validate_config(cfg)
    command = cfg["command"]
    seed = int(cfg.get("seed", 0))
    workers = int(cfg.get("workers", 1))
    outdir = Path(cfg.get("out", "jumpsde_out"))
    section = dict(cfg.get(command, {}))
    resolved = {"version": CONFIG_VERSION, "command": command, "seed": seed,
                "workers": workers, "out": str(outdir), command: section}
    if command == "simulate":
        code = _cmd_simulate(section, seed, outdir)
        write_manifest(outdir, resolved, seed, [outdir / "trajectory.csv"])
        return code
    if command == "certify":
        code, _ = _cmd_certify(section, seed, outdir)
        write_manifest(outdir, resolved, seed, [outdir / "certificate.json"])
        return code
    if command == "experiment":
        report = run_experiment(section, seed, workers)
        files = write_report(report, outdir)
        write_manifest(outdir, resolved, seed, files)
        print(f"{report.name}: {report.verdict}")
        return report.exit_code()
    # suite
    outdir.mkdir(parents=True, exist_ok=True)
    verdict, results, files = run_suite(section, seed, workers, outdir)
    summary = outdir / "suite_summary.json"
    summary.write_text(json.dumps(
        {"suite": section.get("name"), "verdict": verdict,
         "entries": results}, sort_keys=True, indent=2) + "\n")
    files.append(summary)
    write_manifest(outdir, resolved, seed, files)
    print(f"suite {section.get('name')}: {verdict}")
    return 0 if verdict == "PASS" else 2


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jumpsde",
        description="Jump-SDE simulation and property-verification lab")
    parser.add_argument("--config", help="JSON run config")
    parser.add_argument("--seed", type=int, help="master seed (overrides "
                        "config and JUMPSDE_SEED)")
    parser.add_argument("--workers", type=int, help="worker process cap")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command")

    p_sim = sub.add_parser("simulate", help="simulate one trajectory to CSV")
    p_sim.add_argument("--model", default=None)
    p_sim.add_argument("--x0", default=None,
                       help="initial state (comma-separated for m > 1)")
    p_sim.add_argument("--T", type=float, default=None)
    p_sim.add_argument("--dt", type=float, default=None)
    p_sim.add_argument("--scheme", choices=("euler", "tamed_euler"),
                       default=None)

    p_cert = sub.add_parser("certify", help="fit or refute a certificate")
    p_cert.add_argument("--model", default=None)
    p_cert.add_argument("--assumption", default=None,
                        help="growth | log-lipschitz | jump-invertibility "
                             "(aliases: 2.1, 3.1, 4.1)")
    p_cert.add_argument("--N", default=None, help="comma-separated levels")
    p_cert.add_argument("--gauge", default=None)
    p_cert.add_argument("--inverse", default=None,
                        choices=("linear", "identity"))

    p_exp = sub.add_parser("experiment", help="run one experiment")
    p_exp.add_argument("--name", default=None)
    p_exp.add_argument("--model", default=None)
    p_exp.add_argument("--paths", type=int, default=None)
    p_exp.add_argument("--T", type=float, default=None)
    p_exp.add_argument("--dt", type=float, default=None)
    p_exp.add_argument("--x0", default=None)

    p_suite = sub.add_parser("suite", help="run a pinned experiment bundle")
    p_suite.add_argument("--name", default=None)
    p_suite.add_argument("--paths", type=int, default=None)
    return parser


def _parse_x0(text):
    return [float(tok) for tok in str(text).split(",")]


def _merge_cli(cfg: dict, args) -> dict:
    command = args.command or cfg.get("command")
    if command is None:
        raise ConfigError("no command given (flag or config)")
    cfg["command"] = command
    if args.seed is not None:
        cfg["seed"] = args.seed
    elif "seed" not in cfg:
        env = os.environ.get("JUMPSDE_SEED")
        cfg["seed"] = int(env) if env is not None else 0
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["out"] = args.out
    section = dict(cfg.get(command, {}))
    for key in ("model", "x0", "T", "dt", "scheme", "name", "paths",
                "assumption", "N", "gauge", "inverse"):
        val = getattr(args, key, None)
        if val is None:
            continue
        if key == "x0":
            section[key] = _parse_x0(val)
        elif key == "N":
            section[key] = [int(tok) for tok in str(val).split(",")]
        else:
            section[key] = val
    cfg[command] = section
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config_file(args.config) if args.config else {}
        cfg = _merge_cli(cfg, args)
        cfg = validate_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return run_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
