"""Command line entry point for scenario runs, kernel comparisons and verification."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Iterable

from .config import PRECISIONS, SHAPE_NAMES, ScenarioConfig
from .errors import ConfigError, RetentionStreamError
from .logging_utils import configure_logging
from .scenarios import compare_kernels, probe_snapshots, run_scenario
from .suite import run_verification_suite

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_USAGE = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat key = value configuration file")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--length", type=int, dest="stream_length", help="Stream length T")
    parser.add_argument("--chunk", type=int, dest="chunk_size", help="Chunk size (default 21)")
    parser.add_argument("--window", type=int, help="Local window size W (default 10)")
    parser.add_argument("--out", dest="out_dir", help="Output directory")
    parser.add_argument("--precision", choices=PRECISIONS, help="Arithmetic precision")
    parser.add_argument("--shape", choices=SHAPE_NAMES, help="Influence kernel shape")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging output")


def parse_args(args: Iterable[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Stream a planted sequence through the gated layer")
    _add_common(run)

    verify = commands.add_parser("verify", help="Run every bound check and export the reports")
    _add_common(verify)
    verify.add_argument(
        "--debug-gamma-override",
        type=float,
        metavar="G",
        help="Force every gate to G in the state bound check",
    )

    kernels = commands.add_parser("kernels", help="Compare drift across influence kernel shapes")
    _add_common(kernels)

    probe = commands.add_parser("probe", help="Ridge-probe the state snapshots of a finished run")
    _add_common(probe)

    return parser.parse_args(args=None if args is None else list(args))


def _overrides(options: argparse.Namespace) -> dict[str, Any]:
    names = ("seed", "stream_length", "chunk_size", "window", "out_dir", "precision", "shape")
    return {name: getattr(options, name) for name in names}


def dispatch(options: argparse.Namespace, cfg: ScenarioConfig) -> int:
    if options.command == "run":
        result = run_scenario(cfg)
        LOGGER.info("Wrote %d records to %s", len(result.records), result.out_dir)
        return EXIT_OK
    if options.command == "verify":
        suite = run_verification_suite(cfg, gamma_override=options.debug_gamma_override)
        return EXIT_OK if suite.passed else EXIT_VERIFICATION_FAILED
    if options.command == "kernels":
        shapes = (options.shape,) if options.shape else SHAPE_NAMES
        compare_kernels(cfg, shapes)
        return EXIT_OK
    probe_snapshots(cfg)
    return EXIT_OK


def main(argv: Iterable[str] | None = None) -> int:
    try:
        options = parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    configure_logging("DEBUG" if options.verbose else None)
    try:
        cfg = ScenarioConfig.load(options.config, _overrides(options))
    except ConfigError as exc:
        LOGGER.error("%s", exc)
        return EXIT_USAGE
    try:
        return dispatch(options, cfg)
    except RetentionStreamError as exc:
        LOGGER.error("%s failed: %s", options.command, exc)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_VERIFICATION_FAILED
    except OSError as exc:
        target = exc.filename or cfg.out_dir
        LOGGER.error("%s failed: cannot write %s: %s", options.command, target, exc.strerror or exc)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
