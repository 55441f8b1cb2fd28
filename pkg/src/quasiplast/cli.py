"""Command line front end: ``quasiplast run <config.json>`` and ``quasiplast describe <name>``.

Exit codes: 0 all checks passed, 2 invalid configuration or unknown name,
3 solver failure, 4 at least one check failed.  Errors are printed to stderr
as a single JSON record and, when possible, written to ``error.json``.
"""

import argparse
import json
import os
import sys

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import ScenarioConfig
from .evi import ProjectionError
from .experiments import EXPERIMENTS, RUNNERS
from .forward import SolverError
from .model import CATALOG

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

PARAMETER_MEANINGS = {
    "mu": "shear modulus (> 0)",
    "lam": "first Lame parameter (d*lam + 2*mu > 0)",
    "k1": "kinematic hardening modulus (> 0), H = k1 * identity",
    "sigma0": "yield stress (> 0)",
    "dim": "tensor dimension of the single material point (2 or 3)",
    "nx": "elements along the length (2*nx*ny <= 32)",
    "ny": "elements along the height",
    "length": "length of the rectangle",
    "height": "height of the rectangle",
    "traction": "traction direction applied at every loaded node",
}


def _error(kind, message, code, out_dir=None, **details):
    record = {"error": kind, "message": message, "exit_code": code}
    record.update(details)
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        except OSError:
            pass
    return code


def _write(out_dir, name, text):
    with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def run(config_path, jobs=1, out=None, seed=None):
    try:
        with open(config_path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        return _error("config", f"cannot read {config_path}: {exc}", EXIT_CONFIG)
    if isinstance(data, dict):
        if out is not None:
            data["output_dir"] = out
        if seed is not None:
            data["seed"] = seed
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        errors = [{"loc": [str(x) for x in e["loc"]], "msg": e["msg"]} for e in exc.errors()]
        return _error("config", "scenario does not match the schema", EXIT_CONFIG, errors=errors)
    out_dir = cfg.output_dir
    try:
        files, checks = RUNNERS[cfg.experiment](cfg, jobs=jobs)
    except (SolverError, ProjectionError, np.linalg.LinAlgError) as exc:
        return _error("solver", str(exc), EXIT_SOLVER, out_dir,
                      step=getattr(exc, "step", None),
                      history=[float(x) for x in getattr(exc, "history", ())])
    except ValueError as exc:
        return _error("config", str(exc), EXIT_CONFIG, out_dir)
    passed = all(c.passed for c in checks)
    summary = {
        "experiment": cfg.experiment,
        "model": cfg.model.name,
        "seed": cfg.seed,
        "checks": {c.name: c.to_dict() for c in checks},
        "passed": passed,
    }
    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        _write(out_dir, name, text)
    _write(out_dir, "summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} {c.relation} {c.threshold:.6g}")
    if not passed:
        failed = [c.name for c in checks if not c.passed]
        return _error("check", "some checks failed", EXIT_CHECK, out_dir, failed=failed)
    return EXIT_OK


def describe(name):
    if name in CATALOG:
        entry = CATALOG[name]
        lines = [f"model {name}", f"  {entry['summary']}", "  parameters:"]
        for p in entry["parameters"]:
            lines.append(f"    {p}: {PARAMETER_MEANINGS.get(p, '')}")
        return "\n".join(lines)
    if name in EXPERIMENTS:
        entry = EXPERIMENTS[name]
        lines = [f"experiment {name}", f"  {entry['summary']}", "  checks:"]
        lines += [f"    - {c}" for c in entry["checks"]]
        lines.append("  outputs: " + ", ".join(entry["outputs"]))
        return "\n".join(lines)
    raise KeyError(name)


def build_parser():
    parser = argparse.ArgumentParser(prog="quasiplast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p_run.add_argument("--out", default=None, help="output directory (overrides the config)")
    p_run.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    p_desc = sub.add_parser("describe", help="describe a model or an experiment")
    p_desc.add_argument("name")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, jobs=args.jobs, out=args.out, seed=args.seed)
    try:
        print(describe(args.name))
    except KeyError:
        known = sorted(CATALOG) + sorted(EXPERIMENTS)
        return _error("unknown-name", f"no model or experiment named {args.name!r}", EXIT_CONFIG,
                      known=known)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
