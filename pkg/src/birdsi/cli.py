"""``birdsi`` command line.

Exit codes: 0 success, 1 validation or scoring-policy failure, 2 usage
error, 3 environment/startup failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import threading
from pathlib import Path
from typing import Sequence

from . import __version__
from .groundtruth import (
    GroundTruthError,
    VersioningError,
    compile_ground_truth,
    emit_query_directory,
    load_ground_truth,
    scan_collection,
    validate_succession,
)
from .mockserver import OracleMode, serve
from .report import ResultsFileError, format_results, load_results, report_from_run, score_offline
from .runner import RunConfig, StartupError, run_benchmark
from .scoring import ConfigurationError, PenaltyPolicy
from .window import TABLE_G_VALUES, WindowError, WindowSpec, window_table

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ENV = 0, 1, 2, 3
TIMEOUT_ENV = "BIRDSI_TIMEOUT_MS"

log = logging.getLogger("birdsi")


def _window_arg(text: str) -> WindowSpec:
    try:
        return WindowSpec.parse(text)
    except WindowError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _penalty_arg(text: str) -> PenaltyPolicy:
    try:
        return PenaltyPolicy.parse(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _mode_arg(text: str) -> OracleMode:
    try:
        return OracleMode.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _default_timeout() -> float:
    raw = os.environ.get(TIMEOUT_ENV)
    if raw:
        try:
            return int(raw) / 1000
        except ValueError:
            log.warning("ignoring non-integer %s=%r", TIMEOUT_ENV, raw)
    return 30.0


def _add_scoring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=_window_arg, default=WindowSpec.convex(),
                   help="mpeg7 | convex:<k>,<m> | fixed:<n> | equal-g | double-g (default convex:1,2)")
    p.add_argument("--penalty", type=_penalty_arg, default=PenaltyPolicy(),
                   help="w+1 (default) | multiplier:<c>")
    p.add_argument("--literal-nrr", action="store_true",
                   help="normalize with the unshifted RR/(worst-best) form (not zero for a perfect query)")
    p.add_argument("--exclude-self", action="store_true",
                   help="hold the query image out of its own ground truth")
    p.add_argument("--allow-nonpositive-window", action="store_true",
                   help="permit windows equal to G (equal-g, small fixed windows)")
    p.add_argument("--json", type=Path, help="also write the structured report here")
    p.add_argument("--timestamp", help="fixed report timestamp (for reproducible output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="birdsi", description="Image retrieval benchmark harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gt = sub.add_parser("gt", help="ground-truth compilation and validation")
    gt_sub = gt.add_subparsers(dest="gt_command", required=True)
    p = gt_sub.add_parser("compile", help="compile a categorized image tree")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--previous", type=Path)
    p.add_argument("--query-dir", type=Path)
    p.add_argument("--opaque", action="store_true",
                   help="query directory holds content only, no source paths")
    p.set_defaults(func=cmd_gt_compile)
    p = gt_sub.add_parser("validate", help="check append-only succession of two versions")
    p.add_argument("--old", type=Path, required=True)
    p.add_argument("--new", type=Path, required=True)
    p.set_defaults(func=cmd_gt_validate)

    p = sub.add_parser("window-table", help="tabulate scoring windows")
    p.add_argument("--gmax", type=_positive_int, default=100)
    p.add_argument("--g", type=_int_list, default=list(TABLE_G_VALUES), help="comma-separated G values")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_window_table)

    p = sub.add_parser("score", help="score a recorded results file")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--results", type=Path, required=True)
    _add_scoring_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("run", help="run the benchmark against a live server")
    p.add_argument("--server", required=True, help="host:port")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--concurrency", type=_positive_int, default=1)
    p.add_argument("--timeout", type=float, default=None,
                   help=f"per-query timeout in seconds (default ${TIMEOUT_ENV} or 30)")
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--shuffle", type=int, metavar="SEED", help="issue queries in seeded random order")
    p.add_argument("--record", type=Path, help="write the raw answers as a results file")
    _add_scoring_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("mock", help="serve a deterministic oracle")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--mode", type=_mode_arg, default=OracleMode())
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--exclude-self", action="store_true")
    p.set_defaults(func=cmd_mock)
    return parser


def cmd_gt_compile(args: argparse.Namespace) -> int:
    previous = load_ground_truth(args.previous) if args.previous else None
    try:
        gt = compile_ground_truth(scan_collection(args.root), previous)
    except VersioningError as exc:
        print(f"versioning error: {len(exc.violations)} violation(s)", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_FAIL
    gt.write(args.out)
    images = len(gt.images())
    print(f"wrote {args.out}: version {gt.version}, {len(gt.categories)} categories, "
          f"{images} images, gmax {gt.g_max}")
    if args.query_dir:
        n = emit_query_directory(gt, args.query_dir, args.root, opaque=args.opaque)
        print(f"query directory {args.query_dir}: {n} entries")
    return EXIT_OK


def cmd_gt_validate(args: argparse.Namespace) -> int:
    report = validate_succession(load_ground_truth(args.old), load_ground_truth(args.new))
    sys.stdout.write(report.render())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_window_table(args: argparse.Namespace) -> int:
    try:
        table = window_table(args.g, args.gmax)
    except WindowError as exc:
        print(f"birdsi window-table: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(table.to_csv() if args.format == "csv" else table.to_text())
    return EXIT_OK


def _emit(report, json_path: Path | None) -> None:
    sys.stdout.write(report.to_text())
    if json_path:
        json_path.write_text(report.to_json(), encoding="utf-8")


def cmd_score(args: argparse.Namespace) -> int:
    gt = load_ground_truth(args.gt)
    report = score_offline(
        gt,
        load_results(args.results),
        args.window,
        args.penalty,
        literal=args.literal_nrr,
        include_self=not args.exclude_self,
        allow_nonpositive_window=args.allow_nonpositive_window,
        timestamp=args.timestamp,
    )
    _emit(report, args.json)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig(
        server_endpoint=args.server,
        gt_path=str(args.gt),
        window=args.window,
        penalty=args.penalty,
        concurrency=args.concurrency,
        per_query_timeout=args.timeout if args.timeout is not None else _default_timeout(),
        warmup_queries=args.warmup,
        shuffle_seed=args.shuffle,
        allow_nonpositive_window=args.allow_nonpositive_window,
        include_self=not args.exclude_self,
        literal_nrr=args.literal_nrr,
    )
    result = run_benchmark(config)
    if args.record:
        args.record.write_text(format_results(result.responses), encoding="utf-8")
    _emit(report_from_run(result, args.timestamp), args.json)
    return EXIT_OK


def cmd_mock(args: argparse.Namespace) -> int:
    gt = load_ground_truth(args.gt)
    server = serve(gt, args.mode, args.bind, include_self=not args.exclude_self)
    print(f"serving {len(gt.images())} images in mode {args.mode} on {server.endpoint}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    prog = f"birdsi {args.command}"
    try:
        return args.func(args)
    except StartupError as exc:
        print(f"{prog}: startup failed: {exc}", file=sys.stderr)
        return EXIT_ENV
    except (ConfigurationError, WindowError) as exc:
        print(f"{prog}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GroundTruthError, ResultsFileError) as exc:
        print(f"{prog}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"{prog}: {exc}", file=sys.stderr)
        return EXIT_ENV
    except ValueError as exc:
        print(f"{prog}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
