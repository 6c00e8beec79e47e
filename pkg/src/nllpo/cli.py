"""Command-line entry point: ``nllpo <kind> [flags]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import BreakdownNonFinite, ConfigError, DataError, NonFiniteLoss, NotPositiveDefinite
from .harness import KINDS, LOSSES, RunConfig, parse_config_text, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("nllpo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nllpo", description="NLL vs. policy-gradient training experiments.")
    parser.add_argument("kind", choices=KINDS, help="experiment to run")
    parser.add_argument("--loss", choices=LOSSES)
    parser.add_argument("--lambda", dest="lam", type=float, help="entropy weight")
    parser.add_argument("--seed", type=int, help="first seed")
    parser.add_argument("--seeds", type=int, help="number of consecutive seeds")
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then ``--set`` pairs, then the named flags."""
    values = {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        values.update(parse_config_text(text))
    for pair in args.set:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    values["kind"] = args.kind
    for key in ("loss", "lam", "seed", "seeds"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.out is not None:
        values["out"] = str(args.out)
    return RunConfig.from_mapping(values)


def _report(run: RunConfig, result: dict) -> str:
    if run.kind == "closed-form-check":
        return (f"closed-form-check: max |A-A*| {result['max_a_err']:.2e}, max |B-B*| {result['max_b_err']:.2e}, "
                f"max rel |U-U*| {result['max_u_rel_err']:.2e}")
    if run.kind == "landscape":
        return f"landscape: argmin u = {result['argmin_u']}, theoretical u* = {result['u_star']:.4f}"
    agg = result["aggregate"]
    parts = [f"{run.kind} {run.loss} over {run.seeds} seed(s):"]
    for key in ("val_nll", "val_mse", "mean_err", "var_err", "accuracy", "auc", "reward_u"):
        if key in agg:
            parts.append(f"{key} {agg[key]['mean']:.4f} +/- {agg[key]['se']:.4f}")
    unstable = [s["seed"] for s in result["per_seed"] if s.get("unstable")]
    if unstable:
        parts.append(f"unstable seeds {unstable}")
    return " ".join(parts)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = resolve_config(args)
        result = run_experiment(run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, BreakdownNonFinite, NotPositiveDefinite, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(_report(run, result))
    if run.out is None:
        log.info("summary: %s", json.dumps(result, sort_keys=True)[:2000])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
