"""Command-line entry point: ``satwave {validate,simulate,analyze,sweep}``.

Exit codes: 0 success, 1 domain failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import InvalidArgumentError
from .experiment import (ConfigError, analyze_run, load_config, run_experiment, run_sweep,
                         validate_config)

log = logging.getLogger("satwave")


def _interval(text):
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected T0:T1, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satwave", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check geometry and nonlinearity assumptions")
    v.add_argument("--config", required=True)

    s = sub.add_parser("simulate", help="run a simulation into a run directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="run directory (defaults to output_dir in the config)")
    s.add_argument("--restart", help="checkpoint.json to continue from")

    a = sub.add_parser("analyze", help="decay analysis of a run directory")
    a.add_argument("run_dir", nargs="?")
    a.add_argument("--out", help="where to write the report (defaults to the run directory)")
    a.add_argument("--run", dest="run_opt", help="run directory (alternative to positional)")
    a.add_argument("--r", type=float)
    a.add_argument("--window", type=_interval)
    a.add_argument("--tau", type=_interval)
    a.add_argument("--svg", action="store_true")

    w = sub.add_parser("sweep", help="run a grid or list of config overrides")
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--jobs", type=int, default=1)
    return p


def _cmd_validate(args) -> int:
    report = validate_config(load_config(args.config))
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    report = validate_config(cfg)
    # well-posedness needs the nonlinearity assumptions; the geometric one
    # only matters for decay rates and is recorded in the manifest instead
    if not report["nonlinearity"]["passed"]:
        print(json.dumps(report, indent=2))
        return 1
    for msg in report["violations"]:
        log.warning("%s", msg)
    man = run_experiment(cfg, args.out, restart=args.restart)
    print(json.dumps({k: man[k] for k in ("status", "config_hash", "wall_clock_s", "summary")},
                     indent=2, default=str))
    return 0 if man["status"] == "ok" else 1


def _cmd_analyze(args) -> int:
    run = args.run_dir or args.run_opt
    if run is None:
        raise ConfigError("analyze needs a run directory")
    try:
        rep = analyze_run(run, r=args.r, window=args.window, tau=args.tau, svg=args.svg,
                          out_dir=args.out)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(rep, indent=2, default=str))
    return 0


def _cmd_sweep(args) -> int:
    try:
        with open(args.config) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from exc
    rows = run_sweep(spec, args.out, jobs=args.jobs)
    failed = [r["index"] for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} runs, {len(failed)} failed")
    return 1 if failed else 0


COMMANDS = {"validate": _cmd_validate, "simulate": _cmd_simulate,
            "analyze": _cmd_analyze, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
