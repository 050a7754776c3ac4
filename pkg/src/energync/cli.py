"""Command-line entry point: ``energync {bounds,validate,simulate,plotdata}``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from .analysis import bound_rows, combination_series
from .errors import AnalysisError, InvalidSpec, ModelMismatch, ParseError, ScenarioError
from .scenario import Scenario, load_scenario
from .validation import header_lines, simulate_chunk, validate

EXIT_PARSE, EXIT_SEMANTIC, EXIT_ANALYSIS, EXIT_VALIDATION = 1, 2, 3, 4
TRACE_COLUMNS = ("t", "A", "A_star", "C", "C_star", "E", "B")


def _num(v) -> str:
    return format(float(v), ".10g")


def _csv(header: tuple[str, ...], columns, rows) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def _write_traces(out: Path, traces: dict, header: tuple[str, ...]) -> list[Path]:
    paths = []
    for name, table in traces.items():
        p = out / "traces" / f"{name}.csv"
        _write(p, _csv(header, TRACE_COLUMNS, ([_num(v) for v in row] for row in table)))
        paths.append(p)
    return paths


# -- commands -------------------------------------------------------------------


def cmd_bounds(sc: Scenario, out: Path) -> Path:
    rows = bound_rows(sc)
    path = out / "bounds.csv"
    _write(path, _csv(header_lines(sc, "bounds"), ("metric", "x", "value"),
                      ([r.metric, _num(r.x), _num(r.value)] for r in rows)))
    return path


def cmd_validate(sc: Scenario, out: Path, workers: int = 1, dump_traces: bool = False) -> tuple[Path, bool]:
    """Writes ``validation.csv``; returns its path and whether every asserted row passed."""
    try:
        result = validate(sc, workers=workers, keep_traces=dump_traces)
    except ModelMismatch as exc:
        _write(out / "validation.csv", exc.report.to_csv())
        raise
    report, traces = result if dump_traces else (result, {})
    path = out / "validation.csv"
    _write(path, report.to_csv())
    if dump_traces:
        _write_traces(out, traces, header_lines(sc, "validate --dump-traces"))
    return path, report.ok


def cmd_simulate(sc: Scenario, out: Path) -> list[Path]:
    """Full traces of replication 0, one CSV per node on the path."""
    _, traces = simulate_chunk(sc, 0, 1, keep_first=True)
    return _write_traces(out, traces, header_lines(sc, "simulate"))


def cmd_plotdata(sc: Scenario, out: Path, empirical: bool = False, workers: int = 1) -> Path:
    """Long-format ``metric, x, series, value`` table of analytical (and optionally empirical) series."""
    rows = [(r.metric, r.x, "analytical", r.value) for r in bound_rows(sc)]
    xs = np.asarray(sc.analysis.x_grid, dtype=float)
    for node in sc.path_nodes:
        if len(node.sources) > 1:
            metric = "sec_bounds" if len(sc.path.nodes) == 1 else f"sec_bounds@{node.name}"
            for series, values in combination_series(sc, node, xs).items():
                rows.extend((metric, x, series, v) for x, v in zip(xs, values))
    if empirical:
        report = validate(sc, workers=workers)
        for r in report.rows:
            rows.append((f"{r.metric}@{r.scope}", r.x, f"empirical_t={_num(r.t)}", r.empirical))
    path = out / "plotdata.csv"
    _write(path, _csv(header_lines(sc, "plotdata"), ("metric", "x", "series", "value"),
                      ([m, _num(x), s, _num(v)] for m, x, s, v in rows)))
    return path


# -- argument handling ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, type=Path, help="scenario file")
    common.add_argument("--output", type=Path, default=Path("."), help="output directory (default: .)")
    common.add_argument("--grid-step", type=float, help="analysis grid step")
    common.add_argument("--horizon", type=float, help="analysis and simulation horizon")
    common.add_argument("--replications", type=int, help="Monte-Carlo replications")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, default=1, help="worker processes for replications")

    parser = argparse.ArgumentParser(prog="energync", description="Stochastic network calculus for energy-harvesting nodes.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bounds", parents=[common], help="analytical bound tables")
    v = sub.add_parser("validate", parents=[common], help="Monte-Carlo check of every bound")
    v.add_argument("--dump-traces", action="store_true", help="also write replication-0 traces")
    sub.add_parser("simulate", parents=[common], help="write one replication's traces")
    p = sub.add_parser("plotdata", parents=[common], help="long-format series for plotting")
    p.add_argument("--empirical", action="store_true", help="add simulated series")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.scenario).with_overrides(
            grid_step=args.grid_step, horizon=args.horizon, replications=args.replications, seed=args.seed)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ScenarioError, ValueError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_PARSE

    out = args.output
    try:
        if args.command == "bounds":
            print(cmd_bounds(sc, out))
        elif args.command == "validate":
            path, ok = cmd_validate(sc, out, args.workers, args.dump_traces)
            print(path)
            if not ok:
                print("validation failed: some bounds were violated", file=sys.stderr)
                return EXIT_VALIDATION
        elif args.command == "simulate":
            for path in cmd_simulate(sc, out):
                print(path)
        else:
            print(cmd_plotdata(sc, out, args.empirical, args.workers))
    except AnalysisError as exc:
        print(f"analysis error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except ModelMismatch as exc:
        print(f"model mismatch: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvalidSpec as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
