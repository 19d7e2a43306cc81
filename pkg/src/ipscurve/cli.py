"""``ipscurve`` command line: estimate, simulate, summarize.

Exit codes: 0 success, 1 simulation thresholds failed, 2 config error or
unknown suite, 3 data validation error, 4 estimation failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import _accel
from .dataset import DataError, SchemaError
from .estimator import EstimationError
from .learners import LearnerError
from .pipeline import ConfigError, RunConfig, run_estimate, run_summarize

log = logging.getLogger("ipscurve")

EXIT_OK = 0
EXIT_THRESHOLDS = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ESTIMATION = 4


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(f"ipscurve: {kind} error: {exc}", file=sys.stderr)
    return code


def _guarded(fn):
    try:
        return fn()
    except (ConfigError, SchemaError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except DataError as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (EstimationError, LearnerError) as exc:
        return _fail(EXIT_ESTIMATION, "estimation", exc)


def cmd_estimate(config: str | Path, data: str | Path, out: str | Path, n_jobs: int = 1) -> int:
    def body():
        cfg = RunConfig.load(config)
        manifest = run_estimate(cfg, data, out, n_jobs=n_jobs)
        log.info("wrote %d files to %s", len(manifest["files"]) + 1, out)
        return EXIT_OK

    return _guarded(body)


def cmd_summarize(config: str | Path, data: str | Path, out: str | Path) -> int:
    def body():
        run_summarize(RunConfig.load(config), data, out)
        return EXIT_OK

    return _guarded(body)


def cmd_simulate(suite: str, out: str | Path, reps: int | None = None, n: int | None = None,
                 seed: int | None = None, n_jobs: int = 1) -> int:
    from .suites import SUITES, run_suite

    if suite not in SUITES:
        print(f"ipscurve: unknown suite {suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_suite(suite, reps, n, seed, n_jobs=n_jobs)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    result.write(out)
    for check in result.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {suite}: {check.name} = {check.observed:.6g} ({check.threshold})")
    return EXIT_OK if result.passed else EXIT_THRESHOLDS


def build_parser() -> argparse.ArgumentParser:
    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                         help="worker threads (default: all cores); results do not depend on it")
    parser = argparse.ArgumentParser(prog="ipscurve", parents=[threads],
                                     description="Incremental propensity score effect curves.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[threads], help="estimate an effect curve from a CSV file")
    summ = sub.add_parser("summarize", parents=[threads], help="descriptive table by treatment and strata")
    for p in (est, summ):
        p.add_argument("--config", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", parents=[threads], help="run a named simulation suite")
    sim.add_argument("--suite", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--n", type=int)
    sim.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = _accel.set_threads(getattr(args, "threads", None))
    if args.command == "estimate":
        return cmd_estimate(args.config, args.data, args.out, n_jobs=threads)
    if args.command == "summarize":
        return cmd_summarize(args.config, args.data, args.out)
    return cmd_simulate(args.suite, args.out, args.reps, args.n, args.seed, n_jobs=threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
