"""Command line: ``dsplan solve`` and ``dsplan compare``.

Exit status: 0 when the run is optimal, 2 when a limit was hit, 1 on error.
Output files go to ``--out`` (default ``$DSPLAN_OUT_DIR`` or the working
directory); see docs/formats.md for their layout.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .formulation import FirstStageIndex, FirstStagePlan
from .network import InstanceError, bundled_path, load_instance
from .pipeline import DETERMINISTIC, METHODS, MODES, OptionError, SolveOptions, compare, prepare_instance, solve
from .report import STATUS_ERROR, STATUS_LIMIT, STATUS_OPTIMAL, comparison_rows, error_report, export_topology, \
    format_table

OUT_ENV = "DSPLAN_OUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_LIMIT = 0, 1, 2
BUNDLED_ALIASES = {"bundled5.json": "five_node.json", "bundled": "five_node.json"}

log = logging.getLogger("dsplan")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 (2 is reserved for limit hits)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dsplan", description="Distribution expansion planning solver.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (("solve", "solve one mode/method combination"),
                            ("compare", "run every method on the same instance")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("instance", nargs="?", default=None,
                       help="instance JSON (default: the bundled five-node stand-in)")
        p.add_argument("--mode", choices=MODES, default="stochastic")
        if name == "solve":
            p.add_argument("--method", choices=METHODS, default="benders")
        p.add_argument("--epsilon", type=float, default=0.0, help="chance budget (chance mode only)")
        p.add_argument("--rho", type=float, default=1.0, help="weight of the recourse cost in chance mode")
        p.add_argument("--tolerance", type=_positive(float), default=1e-3, help="relative optimality gap")
        p.add_argument("--max-iters", type=_positive(int), default=50, help="Benders iteration limit")
        p.add_argument("--time-limit", type=_positive(float), default=math.inf, help="seconds per method")
        p.add_argument("--scenarios", type=_positive(int), default=None,
                       help="replace the instance's scenarios by n generated ones")
        p.add_argument("--seed", type=int, default=0, help="seed for generated scenarios")
        p.add_argument("--jobs", type=_positive(int), default=1, help="parallel subproblem workers")
        p.add_argument("--load-level", type=_positive(float), default=1.5, help="deterministic load factor")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
        p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    return parser


def resolve_instance_path(arg) -> Path:
    if arg is None:
        return bundled_path("five_node.json")
    path = Path(arg)
    if not path.exists() and arg in BUNDLED_ALIASES:
        return bundled_path(BUNDLED_ALIASES[arg])
    return path


def _options(args) -> SolveOptions:
    return SolveOptions(
        mode=args.mode, method=getattr(args, "method", "benders"), epsilon=args.epsilon, rho=args.rho,
        tolerance=args.tolerance, max_iters=args.max_iters, time_limit=args.time_limit,
        scenarios=args.scenarios, seed=args.seed, jobs=args.jobs, load_level=args.load_level,
    )


def _exit_code(status: str) -> int:
    return {STATUS_OPTIMAL: EXIT_OK, STATUS_LIMIT: EXIT_LIMIT}.get(status, EXIT_ERROR)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_solve_outputs(report, inst, out: Path, figures: bool = True) -> list:
    """report.json, scenario_costs.csv, bounds.csv and, for solved runs, topology.dot and figures."""
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    report.write(written[0])
    if report.status == STATUS_ERROR:
        return written
    dropped = set(report.discarded)
    _write_csv(out / "scenario_costs.csv", ["scenario", "cost", "discarded"],
               [[sid, f"{cost:.10g}", int(int(sid) in dropped)] for sid, cost in report.scenario_costs.items()])
    _write_csv(out / "bounds.csv", ["iteration", "lower", "upper"],
               [[r["iteration"], f"{r['lower']:.10g}", f"{r['upper']:.10g}"] for r in report.bound_trace])
    written += [out / "scenario_costs.csv", out / "bounds.csv"]
    index = FirstStageIndex(inst)
    x = np.zeros(len(index))
    for name, v in report.plan.items():
        x[index[name]] = v
    plan = FirstStagePlan.from_vector(x, index)
    title = f"{report.mode} {report.method}"
    (out / "topology.dot").write_text(export_topology(plan, inst, title))
    written.append(out / "topology.dot")
    if figures:
        from .plotting import plot_bound_trace, plot_topology
        plot_bound_trace(report, out / "bounds.png")
        plot_topology(plan, inst, out / "topology.png", title)
        written += [out / "bounds.png", out / "topology.png"]
    return written


def write_compare_outputs(reports: dict, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    rows = comparison_rows(reports)
    with open(out / "comparison.json", "w") as fh:
        json.dump({"rows": rows, "reports": {k: r.to_dict() for k, r in reports.items()}}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    (out / "comparison.txt").write_text(format_table(rows))
    return [out / "comparison.json", out / "comparison.txt"]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    opts = _options(args)
    try:
        opts.validate()
        inst = load_instance(resolve_instance_path(args.instance))
    except (OptionError, InstanceError, OSError) as exc:
        print(f"dsplan: error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    if args.command == "compare":
        reports = compare(inst, opts)
        write_compare_outputs(reports, out)
        sys.stdout.write(format_table(comparison_rows(reports)))
        statuses = {r.status for r in reports.values()}
        if statuses == {STATUS_OPTIMAL}:
            return EXIT_OK
        return EXIT_ERROR if STATUS_ERROR in statuses else EXIT_LIMIT

    try:
        report = solve(inst, opts)
    except Exception as exc:  # noqa: BLE001 - reported and mapped to exit status 1
        log.debug("solve failed", exc_info=True)
        report = error_report(opts.mode, opts.method, opts.epsilon, opts.rho, opts.tolerance,
                              f"{type(exc).__name__}: {exc}")
        print(f"dsplan: error: {report.message}", file=sys.stderr)
    work = inst
    if report.status != STATUS_ERROR and (opts.mode == DETERMINISTIC or opts.scenarios is not None):
        work = prepare_instance(inst, opts)
    write_solve_outputs(report, work, out, figures=not args.no_figures)
    obj = report.objective
    print(f"status {report.status}  objective {obj['total']:.10g}  investment {obj['investment']:.10g}  "
          f"operation {obj['expected_operation']:.10g}  iterations {report.iterations}  "
          f"discarded {report.discarded}")
    return _exit_code(report.status)


if __name__ == "__main__":
    sys.exit(main())
