"""Command-line entry point: ``ppcimpute {ampute,simulate,compare,diagnose}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .amputation import AmputePattern, AmputeSpec, Mechanism, ampute
from .data import ColumnKind, RngStream, load_csv, write_csv, write_rows
from .engine import EngineConfig, run_fcs
from .imputers import MethodName
from .plots import emit_density_data, emit_deviance_plot, emit_distribution_plot, emit_scatter_data
from .ppc import INTERVALS, cell_diagnostics, deviance_summary
from .simulate import RESULT_HEADER, ScenarioSpec, parse_strategies, run_scenario, run_strategy_comparison

CELL_HEADER = ("row", "column", "observed", "rep_mean", "lo", "hi", "covered", "distance")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _level(text: str) -> float:
    """Accept 95 or 0.95."""
    v = float(text)
    return v / 100.0 if v > 1 else v


def _weights(items: list[str]) -> dict[str, float]:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"weight {item!r} must look like name=value")
        out[name.strip()] = float(value)
    return out


def _schema(binary: str | None, methods: dict | None = None) -> dict:
    schema = {name: ColumnKind.BINARY for name in _csv_list(binary or "")}
    for name, spec in (methods or {}).items():
        if spec.get("method") == MethodName.LOGREG.value:
            schema[name] = ColumnKind.BINARY
    return schema


def cmd_ampute(args) -> int:
    data = load_csv(args.input, _schema(args.binary))
    pattern = AmputePattern(tuple(_csv_list(args.pattern)), _weights(args.weights or []))
    spec = AmputeSpec(pattern, Mechanism(args.mechanism), args.prop)
    write_csv(ampute(data, spec, RngStream(args.seed)), args.out)
    return 0


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(
        scenario=args.scenario,
        n=args.n,
        m=args.m,
        proportions=tuple(float(p) / 100.0 for p in _csv_list(args.props)),
        mechanisms=tuple(_csv_list(args.mech)),
        levels=tuple(_level(v) for v in _csv_list(args.levels)),
        seed=args.seed,
    )
    rows = run_scenario(spec, args.out)
    print(",".join(RESULT_HEADER))
    for r in rows:
        print(",".join("NA" if v is None else (f"{v:.4g}" if isinstance(v, float) else str(v)) for v in r.row()))
    return 0


def cmd_compare(args) -> int:
    with open(args.strategies) as fh:
        doc = json.load(fh)
    strategies = parse_strategies(doc)
    methods = {}
    for specs in strategies.values():
        methods.update({k: s.to_dict() for k, s in specs.items()})
    data = load_csv(args.input, _schema(args.binary, methods))
    rows = run_strategy_comparison(data, strategies, _level(args.level), args.m, args.seed, args.maxit)
    header = ("strategy", "variable", "cov", "distance", "ciw")
    if args.out:
        write_rows(args.out, header, (r.row() for r in rows))
    print(",".join(header))
    for r in rows:
        print(f"{r.strategy},{r.variable},{r.cov:.4f},{r.distance:.4f},{r.ciw:.4f}")
    return 0


def cmd_diagnose(args) -> int:
    with open(args.config) as fh:
        doc = json.load(fh)
    doc.setdefault("where", "observed")
    data = load_csv(args.input, _schema(args.binary, doc.get("methods")))
    config = EngineConfig.from_dict(doc, data)
    result = run_fcs(data, config)
    level = _level(args.level)
    report = cell_diagnostics(result, level, interval=args.interval)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "cells.csv", CELL_HEADER, (
        (c.row, c.column, c.observed, c.rep_mean, c.lo, c.hi, c.covered, c.distance)
        for c in report.iter_cells()
    ))
    summary = {
        "level": level,
        "interval": args.interval,
        "m": result.m,
        "variables": {
            name: {"n_cells": s.n_cells, "cov": s.cov, "distance": s.distance, "ciw": s.ciw, "deviance": s.deviance}
            for name, s in report.summaries.items()
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    predictors = {name: spec.predictors for name, spec in config.specs.items()}
    for name in report.summaries:
        col = data[name]
        if col.kind is ColumnKind.BINARY:
            emit_deviance_plot(deviance_summary(result, name), out / f"deviance_{name}.csv")
            continue
        emit_distribution_plot(report, name, out / f"distribution_{name}.csv")
        emit_density_data(result, name, out / f"density_{name}.csv")
        if predictors[name]:
            emit_scatter_data(result, predictors[name][0], name, out / f"scatter_{name}.csv")
    for name, s in report.summaries.items():
        extra = "" if s.deviance is None else f" deviance={s.deviance:.4f}"
        print(f"{name}: cells={s.n_cells} cov={s.cov:.4f} distance={s.distance:.4f} ciw={s.ciw:.4f}{extra}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppcimpute", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ampute", help="impose MCAR or MARr missingness on a complete CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mechanism", choices=[m.value for m in Mechanism], required=True)
    p.add_argument("--prop", type=float, required=True)
    p.add_argument("--pattern", required=True, help="comma-separated target columns")
    p.add_argument("--weights", nargs="*", help="name=value pairs for the weighted sum score")
    p.add_argument("--binary", help="comma-separated binary columns")
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_ampute)

    p = sub.add_parser("simulate", help="run one simulation scenario")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--props", default="30,50,80")
    p.add_argument("--mech", default="mcar,marr")
    p.add_argument("--levels", default="75,95")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare imputation strategies on a CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--strategies", required=True, help="JSON file of per-variable method maps")
    p.add_argument("--level", default="95")
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--maxit", type=int, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--binary", help="comma-separated binary columns")
    p.add_argument("--out", default=None, help="optional CSV for the table")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="posterior predictive report for one engine config")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--level", default="95")
    p.add_argument("--interval", choices=INTERVALS, default="normal")
    p.add_argument("--binary", help="comma-separated binary columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
