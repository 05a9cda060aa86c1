"""Command-line entry point: ``rismeta <subcommand> [options]``.

Every subcommand runs one sweep and writes a results table. Settings come
from a YAML file (see ``configs/desk.yaml``) with command-line flags taking
precedence. Exit status: 0 on success, 1 if any method failed on any sample
(a summary goes to stderr), 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import harness
from .config import SystemConfig, dbm_to_watt
from .gmml import GmmlHyper

SUBCOMMANDS = {
    "sweep-power": "power",
    "sweep-ris": "ris_elements",
    "sweep-antennas": "antennas",
    "sweep-cee": "cee",
    "convergence": "convergence",
    "timing": "timing",
    "nn-size": None,  # width or depth, chosen by --dimension
}

DEFAULT_VALUES = {
    "power": [0, 2, 4, 6, 8, 10],
    "ris_elements": [20, 40, 60, 80, 100],
    "antennas": [16, 32, 48, 64],
    "cee": [-20, -15, -10, -5, 0],
    "convergence": [1, 10, 25, 50, 100, 200, 300, 400, 500],
    "timing": [32, 64, 128, 256],
    "width": [25, 50, 100, 200, 400],
    "depth": [1, 2, 3, 4],
}
DEFAULT_METHODS = {
    "timing": ["GMML", "AO"],
    "convergence": ["GMML", "GML", "ML", "AO"],
    "width": ["GMML"],
    "depth": ["GMML"],
}

_SYSTEM_KEYS = {
    "M", "N", "K", "power_dbm", "noise_dbm", "weights", "carrier_freq", "bs_pos", "ris_pos",
    "user_center", "user_radius", "rician_h", "rician_g", "antenna_spacing",
}
_HYPER_KEYS = {"N_e", "N_o", "N_i", "alpha_X", "alpha_Theta", "lam", "n_0", "hidden", "depth"}
_EXPERIMENT_KEYS = {"samples", "seed", "methods", "restarts", "repeats", "workers"}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for section, allowed in (("system", _SYSTEM_KEYS), ("gmml", _HYPER_KEYS), ("experiment", _EXPERIMENT_KEYS)):
        unknown = set(data.get(section) or {}) - allowed
        if unknown:
            raise ConfigError(f"{path}: unknown keys in '{section}': {sorted(unknown)}")
    unknown = set(data) - {"system", "gmml", "experiment", "sweeps"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return data


def system_from_dict(d: dict) -> SystemConfig:
    kw = dict(d)
    if "power_dbm" in kw:
        kw["P"] = dbm_to_watt(float(kw.pop("power_dbm")))
    if "noise_dbm" in kw:
        kw["noise_power"] = dbm_to_watt(float(kw.pop("noise_dbm")))
    for key in ("bs_pos", "ris_pos", "user_center", "weights"):
        if kw.get(key) is not None:
            kw[key] = tuple(float(x) for x in kw[key])
    return SystemConfig(**kw)


def build_spec(args, data: dict) -> harness.ExperimentSpec:
    kind = SUBCOMMANDS[args.command] or args.dimension
    exp = dict(data.get("experiment") or {})
    sweeps = data.get("sweeps") or {}
    values = args.values or sweeps.get(kind) or DEFAULT_VALUES[kind]
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    else:
        methods = DEFAULT_METHODS.get(kind) or exp.get("methods") or ["GMML", "AO", "RandomPhase"]
    hyper_kw = dict(data.get("gmml") or {})
    if args.epochs is not None:
        hyper_kw["N_e"] = args.epochs
    base = system_from_dict(data.get("system") or {})
    if kind == "timing" and args.ris is not None:
        base = base.replace(N=args.ris)
    return harness.ExperimentSpec(
        kind=kind,
        values=tuple(float(v) for v in values),
        n_samples=args.samples if args.samples is not None else int(exp.get("samples", 20)),
        methods=tuple(methods),
        base=base,
        hyper=GmmlHyper(**hyper_kw),
        seed=args.seed if args.seed is not None else int(exp.get("seed", 0)),
        restarts=int(exp.get("restarts", 20)),
        repeats=int(exp.get("repeats", 3)),
        workers=args.workers if args.workers is not None else int(exp.get("workers", 1)),
    )


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rismeta", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML settings file")
        s.add_argument("--seed", type=int, help="master seed")
        s.add_argument("--out", help="output file (default: stdout)")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("--samples", type=int, help="channel samples per sweep point")
        s.add_argument("--methods", help="comma-separated subset of " + ",".join(harness.METHODS))
        s.add_argument("--values", type=float, nargs="+", help="override the sweep values")
        s.add_argument("--epochs", type=int, help="override N_e")
        s.add_argument("--workers", type=int, help="worker processes")
        s.add_argument("--no-timing", action="store_true", help="omit the wall-time column")
        if name == "nn-size":
            s.add_argument("--dimension", choices=("width", "depth"), default="width")
        if name == "timing":
            s.add_argument("--ris", type=int, help="RIS element count (default from config)")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = build_spec(args, load_config(args.config))
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"rismeta: configuration error: {exc}", file=sys.stderr)
        return 2
    table = harness.timing_profile(spec) if spec.kind == "timing" else harness.run_experiment(spec)
    include_timing = not args.no_timing
    if args.out:
        try:
            harness.emit(table, args.out, args.format, include_timing)
        except OSError as exc:
            print(f"rismeta: {exc}", file=sys.stderr)
            return 1
    else:
        text = (harness.table_to_csv if args.format == "csv" else harness.table_to_json)(table, include_timing)
        sys.stdout.write(text)
    if table.failed:
        print(f"rismeta: {len(table.errors)} method failure(s):", file=sys.stderr)
        for err in table.errors:
            print(f"  {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
