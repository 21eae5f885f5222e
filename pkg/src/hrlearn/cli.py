"""Command-line entry point: ``hrlearn train | sweep | summarize``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import experiment, regcore
from .errors import ConfigError, HrError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:steps`` -> ``steps`` log-spaced points from ``10**lo`` to ``10**hi``."""
    try:
        lo, hi, steps = text.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError as exc:
        raise ConfigError(f"--grid-log expects lo:hi:steps, got {text!r}") from exc
    if steps < 0 or hi < lo:
        raise ConfigError("--grid-log needs lo <= hi and steps >= 0")
    return np.logspace(lo, hi, steps)


def parse_orders(text: str) -> list[int]:
    """``"0,1,3"`` or ``"0-5"``."""
    try:
        if "-" in text:
            a, b = text.split("-")
            orders = list(range(int(a), int(b) + 1))
        else:
            orders = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --orders {text!r}") from exc
    if not orders or min(orders) < 0:
        raise ConfigError("--orders must list non-negative integers")
    return orders


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hrlearn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run a multi-run cart-pole campaign")
    t.add_argument("--config", help="YAML key-value file")
    t.add_argument("--method", choices=experiment.METHODS)
    t.add_argument("--runs", type=int)
    t.add_argument("--episodes", type=int)
    cap = t.add_mutually_exclusive_group()
    cap.add_argument("--capped", dest="env", action="store_const", const="capped")
    cap.add_argument("--uncapped", dest="env", action="store_const", const="uncapped")
    t.add_argument("--seed", dest="base_seed", type=int)
    t.add_argument("--out", dest="output_dir")
    t.add_argument("--workers", type=int)
    t.add_argument("--save-gram", dest="save_gram", action="store_const", const=True)

    s = sub.add_parser("sweep", help="tabulate Obj/Cond/||F_ar|| over a mu_bar grid")
    s.add_argument("--strategy", action="append", choices=sorted(regcore.STRATEGY_BUILDERS),
                   help="repeatable; default scalar and offset_complement")
    s.add_argument("--orders", default="0-5")
    s.add_argument("--grid-log", default="-3:3:61")
    s.add_argument("--gram", help=".npy Gram matrix (default: seeded synthetic 10x10)")
    s.add_argument("--seed", type=int, default=0, help="seed of the synthetic Gram")
    s.add_argument("--mode", choices=[m.value for m in regcore.Mode])
    s.add_argument("--out", required=True)

    m = sub.add_parser("summarize", help="recompute summary statistics from run CSVs")
    m.add_argument("--in", dest="input_dir", required=True)
    return p


def _train(args) -> int:
    overrides = dict(method=args.method, runs=args.runs, episodes=args.episodes, env=args.env,
                     base_seed=args.base_seed, output_dir=args.output_dir, workers=args.workers,
                     save_gram=args.save_gram)
    if args.config:
        cfg = experiment.load_config(args.config, **overrides)
    else:
        cfg = experiment.parse_config({}, **overrides)
    records, summary = experiment.run_experiment(cfg)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    failed = [r.run_index for r in records if not r.completed]
    if failed:
        print(f"runs aborted: {failed}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _sweep(args) -> int:
    strategies = args.strategy or ["scalar", "offset_complement"]
    grid = parse_grid(args.grid_log)
    orders = parse_orders(args.orders)
    source = args.gram if args.gram else args.seed
    rows = experiment.emit_sweep(source, strategies, orders, grid, args.out, mode=args.mode)
    infeasible = sum(not r.feasible for r in rows)
    print(f"wrote {len(rows)} rows to {args.out} ({infeasible} infeasible)")
    if rows and infeasible == len(rows) and args.mode is None:
        print("hint: every row is infeasible; a nearly singular Gram usually needs --mode swapped",
              file=sys.stderr)
    return EXIT_OK


def _summarize(args) -> int:
    summary = experiment.summarize_dir(args.input_dir)
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"hrlearn: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"train": _train, "sweep": _sweep, "summarize": _summarize}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"hrlearn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HrError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"hrlearn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
