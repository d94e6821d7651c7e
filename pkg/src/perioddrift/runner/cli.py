"""Command line entry point: ``perioddrift <kind> --config run.yaml [--seed --out --threads --dt]``."""

from __future__ import annotations

import argparse
import json
import sys

from ..errors import ConfigError, RunFailedError
from .config import KINDS, RunConfig
from .run import run


def build_parser():
    parser = argparse.ArgumentParser(prog="perioddrift", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", required=True, help="YAML run file")
        p.add_argument("--seed", type=int, help="override the seed (unsigned 64-bit)")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--threads", type=int, help="worker processes")
        p.add_argument("--dt", type=float, help="override the base Euler step")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if cfg.kind != args.kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.kind!r}")
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, threads=args.threads, dt=args.dt)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        status, summary = run(cfg)
    except RunFailedError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    if summary["violations"]:
        print(json.dumps({"violations": summary["violations"]}, indent=2))
    print(f"{cfg.kind}: {'passed' if status == 0 else 'thresholds violated'} -> {cfg.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
