"""Command-line interface for magrasp."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from magrasp import __version__
from magrasp.bus import load_stream, save_stream
from magrasp.config import ScenarioConfig, load_config, serialize_config, write_calibration_bundle
from magrasp.constants import EXIT_DIVERGED, EXIT_INTERRUPTED, EXIT_INVALID, EXIT_OK
from magrasp.errors import ConfigError, MagraspError
from magrasp.report_csv import (
    generate_framing_errors_csv,
    generate_frames_csv,
    generate_snapshot_csv,
    generate_sweep_csv,
    generate_tick_csv,
)
from magrasp.report_terminal import print_summary, print_terminal_report
from magrasp.report_text import generate_comparison_text, generate_metrics_text
from magrasp.runner import RunResult, replay, run_ablation_pair, run_calibration, run_scenario, run_sweep

try:
    from rich.console import Console
    from rich.logging import RichHandler
    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="magrasp",
        description="🛸 magrasp — force-aware aerial grasping with magnetic tactile sensing, in simulation",
    )
    parser.add_argument("--version", action="version", version=f"magrasp {__version__}")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    run_parser = subparsers.add_parser("run", help="Run a closed-loop scenario", description="Run one scenario")
    _add_config_arguments(run_parser)
    run_parser.add_argument(
        "--dump-stream",
        action="store_true",
        help="Also write the raw sensor bus stream (stream.bin) for replay",
    )

    ablate_parser = subparsers.add_parser(
        "ablate",
        help="Run a scenario with and without the ablation.toggle flags",
        description="Run an ablation pair and write a side-by-side comparison",
    )
    _add_config_arguments(ablate_parser)

    sweep_parser = subparsers.add_parser("sweep", help="No-load attitude sweep of geomagnetic compensation")
    _add_config_arguments(sweep_parser)

    calibrate_parser = subparsers.add_parser("calibrate", help="Fit sensor gains from synthetic load-cell pairs")
    _add_config_arguments(calibrate_parser)

    replay_parser = subparsers.add_parser("replay", help="Decode a recorded sensor bus stream")
    replay_parser.add_argument("stream", help="Path to a raw stream file written by run --dump-stream")
    _add_common_arguments(replay_parser)

    validate_parser = subparsers.add_parser("validate", help="Check a scenario file and print its canonical form")
    validate_parser.add_argument("config", help="Path to a scenario file")
    _add_common_arguments(validate_parser, outputs=False)

    return parser


def _add_common_arguments(parser: argparse.ArgumentParser, outputs: bool = True) -> None:
    if outputs:
        parser.add_argument("--out", "-o", type=str, metavar="DIR", help="Directory for CSV logs and metrics")
    parser.add_argument("--quiet", "-q", action="store_true", help="Only print errors")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--no-color", action="store_true", help="Disable colored output")


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="Path to a scenario file")
    parser.add_argument("--seed", type=int, metavar="N", help="Override the scenario seed")
    _add_common_arguments(parser)


def _log(message: str, quiet: bool) -> None:
    """Print a progress message unless quiet."""
    if not quiet:
        print(message)


def configure_logging(quiet: bool = False, verbose: bool = False, no_color: bool = False) -> None:
    """Attach one handler to the package logger; repeated calls replace it."""
    logger = logging.getLogger("magrasp")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    if RICH_AVAILABLE and not no_color:
        handler: logging.Handler = RichHandler(console=Console(stderr=True), show_path=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.ERROR if quiet else logging.DEBUG if verbose else logging.WARNING)


def _load(args: argparse.Namespace) -> ScenarioConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    return config


def _output_dir(args: argparse.Namespace) -> Optional[Path]:
    if not getattr(args, "out", None):
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str, quiet: bool) -> None:
    path.write_text(text, encoding="utf-8")
    _log(f"  📄 {path}", quiet)


def write_run_outputs(result: RunResult, out: Path, quiet: bool = False, dump_stream: bool = False) -> None:
    """Tick log, snapshot log, metrics file and the canonical config of one run."""
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "ticks.csv", generate_tick_csv(result.ticks), quiet)
    _write(out / "snapshots.csv", generate_snapshot_csv(result.snapshots), quiet)
    _write(out / "metrics.txt", generate_metrics_text(result.metrics.summary()), quiet)
    _write(out / "config.cfg", serialize_config(result.config), quiet)
    if dump_stream:
        save_stream(out / "stream.bin", result.stream)
        _log(f"  📄 {out / 'stream.bin'}", quiet)


# =============================================================================
# COMMANDS
# =============================================================================


def run_simulation(args: argparse.Namespace) -> int:
    config = _load(args)
    _log(f"🛸 magrasp v{__version__} — running {config.scenario} ({config.duration:g} s, seed {config.seed})",
         args.quiet)
    result = run_scenario(config)

    out = _output_dir(args)
    if out is not None:
        write_run_outputs(result, out, args.quiet, args.dump_stream)
    if not args.quiet:
        print_terminal_report(result.metrics, __version__, force_plain=args.no_color)

    if result.diverged:
        print(f"❌ Error: run diverged at t={result.events.diverged_at:.3f} s: {result.events.diverged_reason}",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def run_ablate(args: argparse.Namespace) -> int:
    config = _load(args)
    _log(f"🛸 magrasp v{__version__} — ablation of {config.scenario}, toggling {', '.join(config.ablation.toggle)}",
         args.quiet)
    pair = run_ablation_pair(config)

    out = _output_dir(args)
    if out is not None:
        write_run_outputs(pair.baseline, out / "baseline", args.quiet)
        write_run_outputs(pair.ablated, out / "ablated", args.quiet)
        _write(out / "comparison.txt", generate_comparison_text(pair.comparison(), pair.toggled), args.quiet)
    if not args.quiet:
        print_terminal_report(pair.baseline.metrics, __version__, force_plain=args.no_color, title="Baseline")
        print_terminal_report(pair.ablated.metrics, __version__, force_plain=args.no_color,
                              title=f"Without {', '.join(pair.toggled)}")

    if pair.baseline.diverged or pair.ablated.diverged:
        print("❌ Error: at least one run of the pair diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def run_attitude_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    report = run_sweep(config)
    out = _output_dir(args)
    if out is not None:
        _write(out / "sweep.csv", generate_sweep_csv(report), args.quiet)
        _write(out / "sweep.txt", generate_metrics_text(report.summary()), args.quiet)
    if not args.quiet:
        print_summary("Attitude Sweep", report.summary(), __version__, force_plain=args.no_color)
    return EXIT_OK


def run_calibrate(args: argparse.Namespace) -> int:
    config = _load(args)
    result = run_calibration(config)
    out = _output_dir(args)
    if out is not None:
        path = out / "calibration.txt"
        write_calibration_bundle(path, {result.node: result.fit.apply(result.true_calibration)},
                                 config.sensing.coefficients.build())
        _log(f"  📄 {path}", args.quiet)
        _write(out / "calibration_metrics.txt", generate_metrics_text(result.summary()), args.quiet)
    if not args.quiet:
        print_summary("Calibration", result.summary(), __version__, force_plain=args.no_color)
    return EXIT_OK


def run_replay(args: argparse.Namespace) -> int:
    path = Path(args.stream)
    if not path.is_file():
        print(f"❌ Error: Stream file does not exist: {path}", file=sys.stderr)
        return EXIT_INVALID
    result = replay(load_stream(path))
    out = _output_dir(args)
    if out is not None:
        _write(out / "frames.csv", generate_frames_csv(result.frames), args.quiet)
        _write(out / "framing_errors.csv", generate_framing_errors_csv(result.errors), args.quiet)
    if not args.quiet:
        print_summary("Replay", result.summary(), __version__, force_plain=args.no_color)
    return EXIT_OK


def run_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    _log(f"✅ {args.config} is valid", args.quiet)
    if args.verbose:
        print(serialize_config(config), end="")
    return EXIT_OK


HANDLERS = {
    "run": run_simulation,
    "ablate": run_ablate,
    "sweep": run_attitude_sweep,
    "calibrate": run_calibrate,
    "replay": run_replay,
    "validate": run_validate,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point for the CLI."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    configure_logging(args.quiet, args.verbose, args.no_color)
    try:
        return HANDLERS[args.command](args)

    except KeyboardInterrupt:
        print("\n  Cancelled.")
        return EXIT_INTERRUPTED

    except ConfigError as e:
        print(f"❌ Error: invalid configuration {e.source or ''}".rstrip(), file=sys.stderr)
        for problem in e.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_INVALID

    except (MagraspError, OSError, ValueError) as e:
        print(f"\n❌ Error: {e}", file=sys.stderr)
        if os.environ.get("MAGRASP_DEBUG"):
            import traceback
            traceback.print_exc()
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
