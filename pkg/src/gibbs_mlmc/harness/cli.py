"""Command line interface.

Subcommands: run, rates, transform-check, sample.  Exit codes: 0 on
success, 2 for configuration errors, 3 for numerical failures
(divergence, weight overflow), 4 when the geometric index cap is hit.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from ..errors import (
    ConfigError,
    DivergenceError,
    GibbsMlmcError,
    JCapExceededError,
    NumericError,
    ParameterError,
    WeightOverflowError,
)
from .config import config_help, load_config
from .runner import format_rows, run_experiment, run_rates, run_sample, run_transform_check

__all__ = ["main", "entry"]


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gibbs-mlmc",
        description="Gibbs expectation estimation via coupled-path multilevel Monte Carlo.",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "execute the configured method and write results.csv"),
        ("rates", "pilot the configured level sampler and fit (alpha, beta, gamma)"),
        ("transform-check", "run the heavy-tail transform diagnostics"),
        ("sample", "dump raw sampler endpoints"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to a key=value config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory (created if missing)")
    return ap


def _write(path: str, content: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(content)


def _summary_line(summary: dict) -> str:
    parts = []
    for key, value in summary.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.17g}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.override("seed", args.seed)
        out_dir = args.out
        if args.command == "run":
            rows, summary = run_experiment(cfg)
            _write(os.path.join(out_dir, "results.csv"), format_rows(rows))
            print(_summary_line(summary))
        elif args.command == "rates":
            rows, summary = run_rates(cfg)
            _write(os.path.join(out_dir, "rates.csv"), format_rows(rows))
            print(_summary_line(summary))
        elif args.command == "transform-check":
            checks, summary = run_transform_check(cfg)
            lines = ["check,passed,value"]
            for name, ok, value in checks:
                lines.append(f"{name},{int(ok)},{format(float(value), '.17g')}")
            _write(os.path.join(out_dir, "transform_check.csv"), "\n".join(lines) + "\n")
            print(_summary_line(summary))
            for name, ok, value in checks:
                print(f"  [{'PASS' if ok else 'FAIL'}] {name} (value={value:.6g})")
        elif args.command == "sample":
            x, summary = run_sample(cfg)
            lines = [",".join(f"x{i}" for i in range(x.shape[1]))]
            for row in np.asarray(x):
                lines.append(",".join(format(float(v), ".17g") for v in row))
            _write(os.path.join(out_dir, "samples.csv"), "\n".join(lines) + "\n")
            print(_summary_line(summary))
        return 0
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, WeightOverflowError, NumericError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except JCapExceededError as exc:
        print(f"geometric cap exceeded: {exc}", file=sys.stderr)
        return 4
    except GibbsMlmcError as exc:  # residual library errors
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:  # console_scripts hook
    raise SystemExit(main())
