"""Command-line entry point: run scenarios, compare batches, serve episodes."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .protocol import serve_socket, serve_stdio
from .runner import (
    compare_batches,
    comparison_text,
    load_batch_summary,
    resolve_seeds,
    run_batch,
    write_comparison,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lemsim",
        description="Deterministic local energy market simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario over one or more seeds")
    run_p.add_argument("--config", required=True, help="config file path or bundled scenario name")
    run_p.add_argument(
        "--seeds",
        default="1",
        help="seed count (sequential from the config seed) or comma-separated explicit seeds",
    )
    run_p.add_argument("--out", required=True, help="output directory for run reports")
    run_p.add_argument(
        "--no-timestamp", action="store_true", help="omit generated-at headers for byte-stable output"
    )

    cmp_p = sub.add_parser("compare", help="compare two or more run directories")
    cmp_p.add_argument("dirs", nargs="+", help="run directories produced by `lemsim run`")
    cmp_p.add_argument("--out", required=True, help="output directory for the comparison report")
    cmp_p.add_argument("--no-timestamp", action="store_true")

    srv_p = sub.add_parser("serve", help="serve episodes over the line-JSON protocol")
    srv_p.add_argument("--config", required=True)
    srv_p.add_argument("--transport", choices=("stdio", "socket"), default="stdio")
    srv_p.add_argument("--host", default="127.0.0.1")
    srv_p.add_argument("--port", type=int, default=0, help="socket port (0 picks a free one)")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seeds = resolve_seeds(args.seeds, config.seed)
    batch = run_batch(config, seeds, Path(args.out), timestamp=not args.no_timestamp)
    print(
        f"{config.name}: {batch['n_seeds']} seed(s) -> {args.out} "
        f"(mean aggregate reward {batch['reward_aggregate_mean']:.4f}, "
        f"p2p ratio {batch['p2p_ratio_mean']:.4f})"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    if len(args.dirs) < 2:
        print("error: compare needs at least 2 run directories", file=sys.stderr)
        return 2
    summaries = [load_batch_summary(Path(d)) for d in args.dirs]
    comparison = compare_batches(summaries)
    write_comparison(comparison, Path(args.out), timestamp=not args.no_timestamp)
    print(comparison_text(comparison), end="")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.transport == "socket":
        serve_socket(config, args.host, args.port)
    else:
        serve_stdio(config)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "serve":
            return _cmd_serve(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
