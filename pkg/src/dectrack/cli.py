"""Command line entry point: ``dectrack run`` and ``dectrack sweep``."""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .config import SCHEMA, ConfigError, bundled_scenarios, load_bundled, load_config
from .runner import run_scenario, run_sweep, sweep_csv, write_outputs
from .sim import InitialDisconnection

EXIT_CONFIG = 2
EXIT_DISCONNECTED = 3


def _bool(text):
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _load(source):
    """A path to a JSON file, or the name of a bundled scenario."""
    if os.path.exists(source) or source.endswith(".json"):
        return load_config(source)
    if source in bundled_scenarios():
        return load_bundled(source)
    raise ConfigError(f"no such config file or bundled scenario: {source}")


def build_parser():
    p = argparse.ArgumentParser(prog="dectrack", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--config", required=True, help="JSON file or bundled scenario name")
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--mode", choices=["decentralized", "centralized"])
    r.add_argument("--risk-aware", type=_bool)
    r.add_argument("--out-dir", default="out")
    r.add_argument("--messages", action="store_true", help="also dump the per-message log")

    s = sub.add_parser("sweep", help="fixed sensor-margin trade-off sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--eta", required=True, help="comma separated margins, e.g. 0.1,0.5,1")
    s.add_argument("--seeds", help="comma separated seeds")
    s.add_argument("--steps", type=int)
    s.add_argument("--out", help="CSV path (stdout if omitted)")

    sub.add_parser("scenarios", help="list bundled scenarios")
    sub.add_parser("schema", help="print the config JSON schema")
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("DECTRACK_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.cmd == "scenarios":
        print("\n".join(bundled_scenarios()))
        return 0
    if args.cmd == "schema":
        print(json.dumps(SCHEMA, indent=2))
        return 0
    try:
        cfg = _load(args.config)
        if args.steps is not None:
            if args.steps < 0 or (args.cmd == "sweep" and args.steps == 0):
                raise ConfigError("--steps must be nonnegative (positive for a sweep)")
            cfg = replace(cfg, steps=args.steps, sweep=replace(cfg.sweep, steps=None))
        if args.cmd == "run":
            if args.mode:
                cfg = replace(cfg, mode=args.mode)
            if args.risk_aware is not None:
                cfg = replace(cfg, risk_aware=args.risk_aware)
            etas = seeds = None
        else:
            etas = [float(v) for v in args.eta.split(",") if v.strip()]
            seeds = [int(v) for v in args.seeds.split(",")] if args.seeds else None
            if not etas or min(etas) < 0:
                raise ConfigError("--eta needs nonnegative values")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.cmd == "run":
            result = run_scenario(cfg, args.seed, keep_messages=args.messages)
            csv_path, json_path = write_outputs(result, args.out_dir, messages=args.messages)
            print(csv_path)
            print(json_path)
        else:
            text = sweep_csv(run_sweep(cfg, etas, seeds))
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
    except InitialDisconnection as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DISCONNECTED
    return 0
