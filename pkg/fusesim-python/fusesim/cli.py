import argparse
import sys
from pathlib import Path
from typing import List, Optional

from fusesim.chain import Trace
from fusesim.common import DebugTargets, LogLevel, configure_logging
from fusesim.errors import ConfigInvalid, ExhaustiveBoundExceeded
from fusesim.harness import classify_trace, expected_ok, load_scenario, run_matrix, run_scenario
from fusesim.protocols import ProtocolName

EXIT_OK = 0
EXIT_UNFAIR = 1
EXIT_CONFIG = 2


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--format", choices=("text", "records"), default="text")
    parser.add_argument(
        "--log-level", type=LogLevel, choices=list(LogLevel), default=LogLevel.ERROR
    )
    parser.add_argument("--debug", type=DebugTargets, choices=list(DebugTargets), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusesim", description="Malleability-aware Fuse transaction simulator"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="play one scenario file")
    run.add_argument("scenario", type=Path)
    run.add_argument("--seed", type=int, default=None, help="overrides the file's seed")
    run.add_argument("--trace", type=Path, default=None, help="write the trace records here")
    _common(run)

    matrix = commands.add_parser("matrix", help="run every enumerated strategy triple")
    matrix.add_argument("protocol", type=ProtocolName, choices=list(ProtocolName))
    matrix.add_argument("--max-bb", type=int, default=1)
    matrix.add_argument("--d", type=int, default=10)
    matrix.add_argument("--t", type=int, default=12)
    matrix.add_argument("--seed", type=int, default=0)
    matrix.add_argument("--workers", type=int, default=1)
    _common(matrix)

    classify = commands.add_parser("classify", help="recompute the verdict of a trace file")
    classify.add_argument("trace", type=Path)
    _common(classify)

    return parser


def _run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.model_copy(update={"seed": args.seed})
    verdict, trace = run_scenario(scenario)

    if args.trace is not None:
        args.trace.write_text(trace.dumps("records"))
    if args.format == "records":
        sys.stdout.write(trace.dumps("records"))
    else:
        sys.stdout.write(trace.dumps("text"))
        print(verdict.summary())
    return EXIT_OK if expected_ok(scenario.protocol, verdict) else EXIT_UNFAIR


def _matrix(args) -> int:
    if args.workers < 1:
        raise ConfigInvalid([f"--workers: must be at least 1, got {args.workers}"])
    summary = run_matrix(
        args.protocol,
        d=args.d,
        t=args.t,
        max_bb=args.max_bb,
        workers=args.workers,
        seed=args.seed,
    )
    sys.stdout.write(summary.render(args.format))
    return EXIT_OK if summary.ok else EXIT_UNFAIR


def _classify(args) -> int:
    try:
        trace = Trace.loads(args.trace.read_text())
    except ValueError as e:
        raise ConfigInvalid([f"{args.trace}: {e}"]) from None
    verdict = classify_trace(trace)
    if args.format == "records":
        print("\t".join([str(verdict.classification), verdict.terminal_phase or "-"]))
    else:
        print(verdict.summary())
    return EXIT_UNFAIR if verdict.classification.problem else EXIT_OK


COMMANDS = {"run": _run, "matrix": _matrix, "classify": _classify}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    if args.debug is not None:
        configure_logging(LogLevel.DEBUG, args.debug)

    try:
        return COMMANDS[args.command](args)
    except (ConfigInvalid, ExhaustiveBoundExceeded) as e:
        for message in getattr(e, "errors", [str(e)]):
            print(f"config error: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
