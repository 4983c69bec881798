"""Command-line front end: convergence | simulate | project-check."""

import argparse
import sys
from dataclasses import replace

from .harness import (
    ConfigError,
    RunConfig,
    parse_config,
    run_convergence,
    run_project_check,
    run_simulation,
    validate_config,
)


def _limit_threads(n):
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


def build_parser():
    parser = argparse.ArgumentParser(
        prog="driftdg",
        description="HDG drift-diffusion solver drivers")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("convergence", "manufactured-solution rate study"),
                       ("simulate", "device-style time-dependent run"),
                       ("project-check", "projection approximation orders")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", metavar="PATH", help="key=value config file")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--threads", type=int, metavar="N", help="BLAS thread bound")
        p.add_argument("--level-override", metavar="N1,N2,...",
                       help="replace the mesh-level ladder")
        p.add_argument("--k", type=int, metavar="K", help="polynomial degree")
    return parser


def load_config(args):
    if args.config:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = RunConfig()
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.k is not None:
        overrides["k"] = args.k
    if args.level_override is not None:
        overrides["levels"] = tuple(int(v) for v in args.level_override.split(",")
                                    if v.strip())
    if overrides:
        cfg = replace(cfg, **overrides)
    validate_config(cfg)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    _limit_threads(cfg.threads)
    try:
        if args.command == "convergence":
            run_convergence(cfg, out_dir=cfg.out)
        elif args.command == "simulate":
            run_simulation(cfg, out_dir=cfg.out)
        elif args.command == "project-check":
            run_project_check(cfg, out_dir=cfg.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # solver failure
        print(f"solver failure: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
