"""Command-line entry point: ``munic test``, ``munic simulate-null`` and ``munic power``.

Exit codes: 0 no rejection (or success), 1 rejection at alpha, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .calibration import TEST_KINDS, TableError, load_table, save_table, simulate_null_table
from .combiners import COLLAPSING_KINDS, run_test
from .pillow import SubsetFamily
from .power import ConfigError, load_config, rows_to_csv, run_power
from .transforms import FITTED_KINDS, DataError, SingularCovarianceError, null_sampler

EXIT_OK, EXIT_REJECT, EXIT_ERROR = 0, 1, 2
DEFAULT_CACHE = "munic-cache"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _threads(value):
    if value == "auto":
        return os.cpu_count() or 1
    try:
        t = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("threads must be a positive integer or 'auto'") from None
    if t < 1:
        raise argparse.ArgumentTypeError("threads must be a positive integer or 'auto'")
    return t


def _centering(args):
    return "estimated" if args.centered else "known_zero"


def _add_centering(sp):
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--centered", action="store_true",
                   help="estimate the centre by the sample mean and subtract it")
    g.add_argument("--fixed-center", action="store_true",
                   help="take the centre to be the origin (default)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="munic", description="m- and s-tests of uniformity and derived hypotheses")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="run a test on a CSV sample")
    t.add_argument("kind", choices=TEST_KINDS)
    t.add_argument("--input", required=True, help="CSV file, one observation per row")
    t.add_argument("--header", action="store_true", help="skip the first line of the input")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--reps", type=int, default=999, help="null table size R")
    t.add_argument("--family", default="full", help="full, min2, min:h or max:h")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--cache", default=DEFAULT_CACHE, help="null-table cache directory")
    t.add_argument("--no-cache", action="store_true")
    t.add_argument("--table", help="prebuilt null table to use")
    _add_centering(t)
    t.add_argument("--double-calibrate", action="store_true")
    t.add_argument("--recalib", type=int, default=499, help="second-stage null samples")
    t.add_argument("--decision", choices=("m", "s"), default="m",
                   help="which test sets the exit code")
    t.add_argument("--json", action="store_true", help="print the report as JSON")
    t.add_argument("--threads", type=_threads, default="auto")

    s = sub.add_parser("simulate-null", help="build and save a null table")
    s.add_argument("kind", choices=TEST_KINDS)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, required=True, help="cube dimension")
    s.add_argument("--reps", type=int, default=999)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--family", default="full")
    s.add_argument("--out", required=True)
    cg = s.add_mutually_exclusive_group()
    cg.add_argument("--collapse", dest="collapse", action="store_true", default=None)
    cg.add_argument("--no-collapse", dest="collapse", action="store_false")
    _add_centering(s)
    s.add_argument("--threads", type=_threads, default="auto")

    pw = sub.add_parser("power", help="run a power study from a scenario file")
    pw.add_argument("--config", required=True)
    pw.add_argument("--out", required=True, help="CSV output path ('-' for stdout)")
    pw.add_argument("--cache", default=None, help="null-table cache directory")
    pw.add_argument("--threads", type=_threads, default="auto")
    return ap


def read_sample(path, header=False) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    try:
        X = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except ValueError as exc:
        raise DataError(f"malformed CSV in {path}: {exc}") from None
    if X.size == 0:
        raise DataError(f"no observations in {path}")
    return X


def cmd_test(args) -> int:
    X = read_sample(args.input, args.header)
    table = None
    if args.table:
        table = load_table(args.table, test_kind=args.kind, R=args.reps)
    report = run_test(
        X, args.kind, args.family, args.alpha, args.reps, args.seed,
        centering=_centering(args), table=table,
        cache_dir=None if args.no_cache else args.cache,
        double_calibrate=args.double_calibrate, recalib_samples=args.recalib,
        threads=args.threads,
    )
    print(report.to_json() if args.json else report.summary())
    reject = report.m_reject if args.decision == "m" else report.s_reject
    return EXIT_REJECT if reject else EXIT_OK


def cmd_simulate_null(args) -> int:
    if args.kind in FITTED_KINDS:
        raise UsageError(f"{args.kind} null tables depend on the fitted sample; "
                         f"they are built by 'munic test {args.kind}'")
    family = SubsetFamily.parse(args.family, args.p)
    collapse = args.kind in COLLAPSING_KINDS if args.collapse is None else args.collapse
    if collapse and args.kind not in COLLAPSING_KINDS:
        raise UsageError(f"{args.kind} null samples are not exchangeable across coordinates; "
                         "collapsing by cardinality is not valid")
    sampler = null_sampler(args.kind, args.n, args.p, centering=_centering(args))
    table = simulate_null_table(sampler, args.n, args.p, family, args.reps, args.seed,
                                test_kind=args.kind, collapse=collapse, threads=args.threads)
    try:
        save_table(table, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    print(f"wrote {args.out}: {args.kind} n={args.n} p={args.p} R={args.reps} "
          f"{len(family)} subsets")
    return EXIT_OK


def cmd_power(args) -> int:
    if not os.path.exists(args.config):
        raise DataError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    csv = rows_to_csv(run_power(cfg, threads=args.threads, cache_dir=args.cache))
    if args.out == "-":
        sys.stdout.write(csv)
    else:
        try:
            with open(args.out, "w", encoding="ascii", newline="") as fh:
                fh.write(csv)
        except OSError as exc:
            raise DataError(f"cannot write {args.out}: {exc}") from None
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        handler = {"test": cmd_test, "simulate-null": cmd_simulate_null,
                   "power": cmd_power}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"munic: error: {exc}", file=sys.stderr)
    except (DataError, ConfigError, TableError, SingularCovarianceError, ValueError) as exc:
        print(f"munic: error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
