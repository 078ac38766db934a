"""Command-line entry point: one subcommand per pipeline stage.

    velocast synth      generate the synthetic city dataset
    velocast aggregate  merge fine zones down to the target count
    velocast graphs     build the OD roster and the 7-graph stack
    velocast featurize  freeze weather, car flow, and feature scalers
    velocast train      train one network per requested variant
    velocast eval       score the test window across weather scenarios
    velocast report     render the metrics as aligned text tables

All stages read one declarative YAML config (--config); --seed,
--out-dir, and --variants override config keys. The resolved config is
echoed to <out_dir>/config_used.yaml. Exit codes: 0 success, 1 user
error (bad config, missing artifact, bad data), 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import traceback

import yaml

from .config import RunConfig, validate_config
from .errors import ConfigError, VelocastError
from .features import VARIANTS
from .stages import STAGES, run_stage

__all__ = ["main", "build_parser"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="velocast",
        description="origin-destination bike-share demand forecasting",
    )
    sub = parser.add_subparsers(dest="stage", metavar="stage")
    sub.required = True
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", default=None,
                       help="YAML run config (omit for full defaults)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the run seed")
        p.add_argument("--out-dir", default=None,
                       help="override the output directory")
        p.add_argument("--variants", default=None,
                       help="comma-separated variant subset, e.g. X,T,W4")
    return parser


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        config.seed = args.seed
        config.synth = dataclasses.replace(config.synth, seed=args.seed)
        config.train = dataclasses.replace(config.train, seed=args.seed)
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.variants is not None:
        requested = tuple(v.strip() for v in args.variants.split(",")
                          if v.strip())
        bad = [v for v in requested if v not in VARIANTS]
        if bad:
            raise ConfigError(
                [f"--variants: unknown {bad}; valid names: "
                 f"{list(VARIANTS)}"]
            )
        if not requested:
            raise ConfigError(["--variants: list is empty"])
        config.variants = requested
    return config


def _echo_config(config: RunConfig) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "config_used.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True,
                       default_flow_style=False)
    return path


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        config = validate_config(args.config)
        config = _apply_overrides(config, args)
        _echo_config(config)
        outputs = run_stage(args.stage, config)
        if args.stage == "report":
            with open(outputs[0]) as fh:
                print(fh.read())
        for path in outputs:
            print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        print("configuration errors:", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return 1
    except VelocastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        print("internal error:", file=sys.stderr)
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
