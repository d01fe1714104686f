"""Command line entry point: ``flowcap run|validate|list`` plus one subcommand per experiment kind."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .. import fields as F
from ..errors import (
    BudgetExceeded, ConfigError, DegenerateConfiguration, FlowError, InvalidProblem, NonPositiveError,
    SteeringFailed, TailMassTooLarge, TargetOutsideRadius, ToleranceNotMet,
)
from .experiments import KINDS, builtin_configs, load_config, run_config, validate_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TOLERANCE = 4

_NUMERICAL = (FlowError, NonPositiveError, SteeringFailed, DegenerateConfiguration, TailMassTooLarge,
              np.linalg.LinAlgError, FloatingPointError)
_TOLERANCE = (ToleranceNotMet, BudgetExceeded, TargetOutsideRadius)


def _print_list(out=None):
    out = out or sys.stdout
    print("named fields:", file=out)
    for name, desc in F.NAMED_FIELDS.items():
        print(f"  {name:14s} {desc}", file=out)
    print("experiment kinds:", file=out)
    for k in KINDS:
        print(f"  {k}", file=out)
    print("built-in configs (use builtin:<name>):", file=out)
    for name in builtin_configs():
        cfg = load_config(f"builtin:{name}")
        print(f"  {name:32s} {cfg.get('kind', '?'):14s} {cfg.get('description', '')}", file=out)


def _run(ref, kind=None):
    try:
        cfg = load_config(ref)
        if kind is not None:
            cfg.setdefault("kind", kind)
            if cfg["kind"] != kind:
                raise ConfigError(f"config kind {cfg['kind']!r} does not match subcommand {kind!r}")
        summary, out, failures = run_config(cfg)
    except (ConfigError, InvalidProblem) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except _TOLERANCE as err:
        print(f"tolerance failure: {err}", file=sys.stderr)
        return EXIT_TOLERANCE
    except _NUMERICAL as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"output": str(out), "summary": _short(summary)}, sort_keys=True, default=str))
    if failures:
        for f in failures:
            print(f"expectation failed: {f}", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def _short(summary):
    return {k: v for k, v in summary.items() if not isinstance(v, (list, dict)) or k == "window"}


def _validate(ref):
    try:
        cfg = load_config(ref)
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return EXIT_CONFIG
    diags = validate_config(cfg)
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return EXIT_CONFIG if diags else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="flowcap", description="Flow-map experiments: run, validate, list.")
    p.add_argument("--list", action="store_true", help="list named fields and built-in configs")
    sub = p.add_subparsers(dest="command")
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", help="path to a YAML/JSON config, or builtin:<name>")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    sub.add_parser("list", help="list named fields and built-in configs")
    for k in KINDS:
        s = sub.add_parser(k, help=f"run a {k} config")
        s.add_argument("config")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list or args.command == "list":
        _print_list()
        return EXIT_OK
    if args.command == "run":
        return _run(args.config)
    if args.command == "validate":
        return _validate(args.config)
    if args.command in KINDS:
        return _run(args.config, kind=args.command)
    parser.print_help()
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
