"""Command line front end: run, replicate, calibrate, serve."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .env import ConfigError, DomainError
from .runner import (CalibrationParams, ScenarioConfig, calibrate,
                     load_calibration, replicate_paper_experiment,
                     run_scenario)
from .server import DEFAULT_GATEWAY_PORT, DEFAULT_PORT, serve_device


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smartmask",
        description="Digital-twin testbed for an active closed-loop mist mask")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write its report")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory")

    p_rep = sub.add_parser(
        "replicate", help="replicate the two-sensor humidifier experiment")
    p_rep.add_argument("--mask", choices=["on", "off"], default="on")
    p_rep.add_argument("--seed", type=int, default=0)
    p_rep.add_argument("--out", default=None)
    p_rep.add_argument("--calibration", default=None,
                       help="calibration JSON (defaults to the packaged one)")

    p_cal = sub.add_parser(
        "calibrate", help="fit the plume/source parameters to target metrics")
    p_cal.add_argument("--targets", default=None,
                       help="JSON file of metric targets (defaults built in)")
    p_cal.add_argument("--out", default="calibration.json")
    p_cal.add_argument("--sweeps", type=int, default=2)

    p_srv = sub.add_parser("serve", help="emulate the device over TCP")
    p_srv.add_argument("--config", required=True)
    p_srv.add_argument("--port", type=int, default=DEFAULT_PORT)
    p_srv.add_argument("--gateway-port", type=int, default=DEFAULT_GATEWAY_PORT)
    p_srv.add_argument("--key-hex", default=None,
                       help="64 hex chars; enables encrypted framing")
    p_srv.add_argument("--speed", type=float, default=1.0,
                       help="real-time multiplier")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("SMARTMASK_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, DomainError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        cfg = ScenarioConfig.from_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        report = run_scenario(cfg)
        print(json.dumps(report.summary, indent=2))
        return 0

    if args.command == "replicate":
        params = load_calibration(args.calibration)
        summary = replicate_paper_experiment(
            params, mask_enabled=(args.mask == "on"),
            seed=args.seed, out_dir=args.out)
        print(json.dumps(summary, indent=2))
        return 0

    if args.command == "calibrate":
        targets = None
        if args.targets:
            with open(args.targets, encoding="utf-8") as f:
                targets = json.load(f)
        report = calibrate(targets=targets, out_path=args.out,
                           start=load_calibration(), sweeps=args.sweeps)
        print(json.dumps(report, indent=2))
        return 0 if report["within_tolerance"] else 2

    if args.command == "serve":
        cfg = ScenarioConfig.from_file(args.config)
        key = bytes.fromhex(args.key_hex) if args.key_hex else None
        serve_device(cfg, port=args.port, gateway_port=args.gateway_port,
                     key=key, speed=args.speed)
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
