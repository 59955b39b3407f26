"""Command line entry point: ``spinsim {run,sizing,verify,list}``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from fractions import Fraction

from . import sizing
from .config import ConfigError, load_config
from .core import SimulationError
from .runner import run_config, write_outputs
from .workloads import EXPERIMENTS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_ACCEPTANCE = 4


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    # exact values stay exact in the CSV; everything else is a decimal float
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else repr(float(x))
    return str(x)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    reports = run_config(cfg)
    paths = write_outputs(args.out, reports)
    print(f"{cfg.experiment}: {len(reports)} runs, wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def cmd_sizing(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "surface.csv"), ("T_ns", "s_bytes", "hpus"),
               sizing.surface(sizing.DEFAULT_T_NS, sizing.DEFAULT_S))
    rates = [(s, _num(sizing.packet_interval(s)), _num(sizing.arrival_rate(s)))
             for s in sizing.DEFAULT_S]
    _write_csv(os.path.join(args.out, "rates.csv"), ("s_bytes", "interval_ps", "rate_pps"), rates)
    written = ["surface.csv", "rates.csv"]
    if args.hpus is not None:
        if args.hpus < 1:
            raise ConfigError("--hpus", "must be >= 1")
        rows = [(args.hpus, s, sizing.max_handler_time(args.hpus, s)) for s in sizing.DEFAULT_S]
        _write_csv(os.path.join(args.out, "max_handler_time.csv"),
                   ("hpus", "s_bytes", "max_handler_time_ps"), rows)
        written.append("max_handler_time.csv")
    print(f"wrote {', '.join(written)} to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_verify
    checks = run_verify(args.out, log=print)
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def cmd_list(args) -> int:
    for exp in EXPERIMENTS.values():
        print(f"{exp.name:<11} {exp.description}")
        print(f"{'':<11} sweep {exp.sweep_param} (default {list(exp.default_values)})")
        print(f"{'':<11} modes {', '.join(exp.modes)}")
        if exp.params:
            print(f"{'':<11} params {exp.params}")
    print(f"{'sizing':<11} HPU requirement surface (use the sizing subcommand)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinsim", description="Packet-level simulator of sPIN NICs with RDMA and "
                                    "Portals 4 baselines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment configuration")
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sizing", help="write the analytic HPU sizing tables")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--hpus", type=int, help="also tabulate max handler time for this HPU count")
    p.set_defaults(func=cmd_sizing)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("list", help="list experiments")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
