"""Command-line entry point.

Every subcommand writes result rows in the harness CSV format, to ``--out`` or
to stdout.  Settings come from the subcommand's defaults, then from
``--config`` (a JSON object with ExperimentSpec field names), then from flags;
later sources win.

Exit status: 0 success, 1 invalid input or I/O, 2 solver or simulation
failure, 3 an acceptance check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    FIGURE_IDS,
    ExperimentSpec,
    compare_report,
    default_spec,
    load_config,
    read_rows,
    run_experiment,
    write_rows,
)
from .ring import DomainError
from .simulator import SimulationError
from .steady_state import SolverError

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 1, 2, 3

log = logging.getLogger("chordchurn")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; our 2 means solver failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _grid_flags() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--keyspace-bits", type=int, help="key space size is 2**bits")
    g.add_argument("--nodes", type=_ints, help="population(s), comma separated")
    g.add_argument("--base", type=_ints, help="finger base(s), comma separated")
    g.add_argument("--r-grid", type=_floats, help="maintenance-to-failure rate ratios")
    g.add_argument("--strategy", choices=("periodic", "coc"), help="maintenance strategy")
    g.add_argument("--model", choices=("recursion", "scaling"), help="analytic lookup model")
    g.add_argument("--beta", type=float, help="periodic: successor share of the budget")
    g.add_argument("--alpha", type=float, help="correction-on-change: S1 stabilisation factor")
    g.add_argument("--a", type=_floats, help="correction-on-change: S2 stabilisation factor(s)")
    g.add_argument("--c", type=float, help="correction-on-change: message factor (default 1 - a)")
    g.add_argument("--seed", type=int, help="first seed")
    g.add_argument("--runs", type=int, help="number of seeds (enables simulation for experiments)")
    g.add_argument("--out", help="output CSV path (default: stdout)")
    g.add_argument("-v", "--verbose", action="store_true")
    return g


def build_parser() -> argparse.ArgumentParser:
    grid = _grid_flags()
    p = _Parser(prog="ccl", description="Chord lookup cost under churn.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("analytic-nochurn", parents=[grid], help="churn-free average lookup length")
    sub.add_parser("analytic-churn", parents=[grid], help="lookup length with dead fingers")
    sub.add_parser("steady-state", parents=[grid], help="maintenance steady states (f, w1, w1')")
    sub.add_parser("simulate", parents=[grid], help="discrete-event simulation")
    e = sub.add_parser("experiment", parents=[grid], help="reproduce one figure")
    e.add_argument("figure_id", choices=FIGURE_IDS)
    r = sub.add_parser("report", help="compare two result files")
    r.add_argument("file_a", help="analytic results (or any results file)")
    r.add_argument("file_b", nargs="?", help="simulated results (default: file_a)")
    r.add_argument("--out", help="write per-point errors to this CSV and a PNG next to it")
    r.add_argument("--median-tol", type=float, default=0.05)
    r.add_argument("--max-tol", type=float, default=0.08)
    r.add_argument("-v", "--verbose", action="store_true")
    return p


_BASE_SPECS = {
    "analytic-nochurn": dict(keyspace_bits=20, nodes=(1000,), strategies=("none",), model="exact"),
    "analytic-churn": dict(keyspace_bits=20, nodes=(1000,), r_grid=(50.0, 100.0, 200.0, 400.0)),
    "steady-state": dict(
        keyspace_bits=20, nodes=(1000,), r_grid=(50.0, 100.0, 200.0, 400.0),
        strategies=("coc",), model="scaling",
    ),
    "simulate": dict(
        keyspace_bits=20, nodes=(1000,), r_grid=(200.0,), simulate=True, analytic=False,
    ),
}


def _overrides(args, command: str) -> dict:
    ov = dict(
        keyspace_bits=args.keyspace_bits, nodes=args.nodes, bases=args.base, r_grid=args.r_grid,
        beta=args.beta, alpha=args.alpha, a_grid=args.a, c=args.c, model=args.model, out=args.out,
    )
    if args.strategy:
        ov["strategies"] = (args.strategy,)
    if args.seed is not None or args.runs is not None:
        seed = 1 if args.seed is None else args.seed
        runs = 1 if args.runs is None else args.runs
        if runs < 1:
            raise DomainError("--runs must be >= 1")
        ov["seeds"] = tuple(range(seed, seed + runs))
        if command == "experiment" and args.runs is not None:
            ov["simulate"] = True
    return {k: v for k, v in ov.items() if v is not None}


def make_spec(args) -> ExperimentSpec:
    command = args.command
    if command == "experiment":
        base = default_spec(args.figure_id)
    else:
        base = ExperimentSpec(command, **_BASE_SPECS[command])
    if args.config:
        base = base.with_overrides(**load_config(args.config))
    return base.with_overrides(**_overrides(args, command))


def _report(args) -> int:
    file_b = args.file_b or args.file_a
    rep = compare_report(args.file_a, file_b, median_tol=args.median_tol, max_tol=args.max_tol)
    for line in rep.lines():
        print(line)
    if args.out:
        out = Path(args.out)
        write_rows(rep.rows(), out)
        from .plotting import plot_report, plot_rows

        plot_report(rep, out.with_suffix(".png"))
        plot_rows(read_rows(args.file_a) + (read_rows(file_b) if args.file_b else []),
                  out.with_name(out.stem + "_results.png"))
        print(f"wrote {out} and figures alongside", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_ACCEPTANCE


def _run(args) -> int:
    if args.command == "report":
        return _report(args)
    spec = make_spec(args)
    log.info("spec: %s", json.dumps({k: v for k, v in vars(spec).items()}, default=list))
    res = run_experiment(spec)
    if res.path is None:
        sys.stdout.write(write_rows(res.rows, None))
    stream = sys.stderr if res.path is None else sys.stdout
    for row in res.excluded:
        print(f"flagged: N={row.N} r={row.r} strategy={row.strategy}: {row.note}", file=stream)
    for check in res.checks:
        print(check.line(), file=stream)
    if res.excluded and args.command != "experiment":
        return EXIT_SOLVER
    return EXIT_OK if res.passed else EXIT_ACCEPTANCE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args)
    except (SolverError, SimulationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DomainError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
