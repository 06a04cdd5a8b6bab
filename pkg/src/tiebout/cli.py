"""Command-line front end.

Subcommands: solve, verify, stability, welfare, sweep, plotdata, validate.
The experiment lives in a TOML config; flags only steer orchestration
(output directory, figures, worker count). Exit statuses: 0 success,
2 invalid config, 3 no convergence, 4 assumption-violation or verification
diagnostics.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import plots, report as report_io
from .config import build_experiment, load_config, validate_experiment
from .equilibrium import solve_basic, solve_extended, verify_equilibrium
from .errors import (Assumption2UnverifiedError, AssumptionViolatedError,
                     ConfigError, CyclingDetectedError, NoConvergenceError,
                     NonSeparableModelError, TieboutError)
from .partition import indifference_locus, extract_border
from .stability import classify_stability
from .sweep import comparative_statics, weak_stability_regression
from .welfare import aggregate_welfare, pareto_probe

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_ASSUMPTION = 4


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiebout",
        description="equilibrium solver and stability analyzer for "
                    "continuum local-public-good sorting economies")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("config", help="experiment config (TOML)")
        p.add_argument("--output-dir", default=None,
                       help="override the [output] directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering next to the delimited output")
        p.add_argument("--workers", type=int, default=1,
                       help="worker threads for independent solver starts")
        p.add_argument("--trace", action="store_true",
                       help="embed per-iteration residual traces in the report")
        p.add_argument("--allow-empty", action="store_true",
                       help="keep boundary states with empty communities")

    common(sub.add_parser("solve", help="find equilibria and write report.json"))
    common(sub.add_parser("stability", help="solve, then classify stability"))
    common(sub.add_parser("welfare", help="solve, then aggregate welfare and "
                                          "run the optimality probe"))
    common(sub.add_parser("sweep", help="comparative statics along the "
                                        "configured parameter path"))
    plotdata = sub.add_parser("plotdata", help="partition, border and "
                                               "indifference-locus dumps")
    common(plotdata)
    plotdata.add_argument("--locus", type=float, nargs="*", default=None,
                          help="fee gaps for indifference loci (defaults to "
                               "[output].locus_gaps)")
    verify = sub.add_parser("verify", help="re-check a stored report")
    verify.add_argument("report", help="path to report.json")
    verify.add_argument("--tolerance", type=float, default=None,
                        help="override the residual tolerance")
    validate = sub.add_parser("validate", help="schema and assumption "
                                               "diagnostics; never solves")
    validate.add_argument("config", help="experiment config (TOML)")
    return parser


def _load(args):
    exp = load_config(args.config)
    if args.output_dir:
        exp.output_dir = args.output_dir
    if getattr(args, "no_figures", False):
        exp.figures = False
    if getattr(args, "allow_empty", False):
        exp.allow_empty = True
    solver = exp.solver
    updates = {}
    if getattr(args, "workers", 1) and args.workers > 1:
        updates["workers"] = args.workers
    if getattr(args, "trace", False):
        updates["trace"] = True
    if updates:
        exp.solver = dataclasses.replace(solver, **updates)
    return exp


def _solve(exp):
    if exp.providers:
        return solve_extended(exp.model, exp.charspec, exp.providers,
                              exp.measure, exp.solver,
                              allow_empty=exp.allow_empty)
    return solve_basic(exp.model, exp.measure, exp.solver,
                       allow_empty=exp.allow_empty)


def _out(exp, name):
    return os.path.join(exp.output_dir, name)


def _borders_at(exp, eq):
    borders = []
    if exp.measure.single().space.dimension > 2:
        return borders
    for i in range(exp.model.n):
        for j in range(i + 1, exp.model.n):
            try:
                borders.append(extract_border(exp.model, exp.measure, eq.state,
                                              i, j, exp.stability.border_grid))
            except TieboutError:
                continue
    return borders


def _metric_centers(exp, eq):
    from .costs import MetricTerm
    for term in exp.model.terms:
        if isinstance(term, MetricTerm):
            return term.resolve_centers(exp.model, eq.state)
    return None


def _emit_solution_artifacts(exp, reports, kind, extras=None):
    payload = report_io.build_report(kind, exp.text, reports, extras,
                                     include_trace=exp.solver.trace)
    report_io.write_json_atomic(_out(exp, "report.json"), payload)
    best = reports[0]
    report_io.write_partition_csv(_out(exp, "partition.csv"), exp.measure,
                                  best.partition)
    borders = _borders_at(exp, best)
    if borders:
        report_io.write_borders_csv(_out(exp, "borders.csv"), borders)
    if exp.figures:
        plots.plot_partition(exp.measure, best.partition,
                             _out(exp, "partition.png"), borders=borders,
                             centers=_metric_centers(exp, best))
        if borders and exp.measure.single().space.dimension == 2:
            plots.plot_borders(borders, _out(exp, "borders.png"))
    return payload


def _cmd_solve(args) -> int:
    exp = _load(args)
    reports = _solve(exp)
    _emit_solution_artifacts(exp, reports, "solve")
    print(f"wrote {_out(exp, 'report.json')} with {len(reports)} equilibria")
    return EXIT_OK


def _cmd_stability(args) -> int:
    exp = _load(args)
    reports = _solve(exp)
    for eq in reports:
        eq.stability = classify_stability(exp.model, exp.measure, eq,
                                          exp.stability)
    _emit_solution_artifacts(exp, reports, "stability")
    labels = [r.stability.classification for r in reports]
    print(f"stability: {labels}")
    return EXIT_OK


def _cmd_welfare(args) -> int:
    exp = _load(args)
    reports = _solve(exp)
    probes = []
    for eq in reports:
        eq.welfare = aggregate_welfare(exp.model, exp.measure, eq.partition,
                                       eq.state)
        try:
            probes.append(pareto_probe(exp.model, exp.measure, eq,
                                       exp.welfare_trials,
                                       exp.welfare_seed).to_dict())
        except NonSeparableModelError as err:
            probes.append(err.to_dict())
    _emit_solution_artifacts(exp, reports, "welfare",
                             extras={"pareto_probes": probes})
    print(f"welfare totals: {[round(r.welfare.total_cost, 6) for r in reports]}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    exp = _load(args)
    if exp.sweep_plan is None:
        raise ConfigError("config has no [sweep] section")
    table = comparative_statics(exp.sweep_family, exp.measure, exp.sweep_plan,
                                exp.solver)
    regression = weak_stability_regression(
        exp.sweep_family, exp.measure, table, exp.stability.eps_ball,
        max(20, exp.stability.trials // 10), exp.stability.seed)
    report_io.write_sweep_csv(_out(exp, "sweep.csv"), table, exp.model.n)
    payload = {
        "schema": "tiebout-report/1",
        "kind": "sweep",
        "generated_at": report_io.build_report("x", "", [])["generated_at"],
        "config_text": exp.text,
        "rows": [{"value": r.value, "status": r.status,
                  "branch_id": r.branch_id,
                  "classification": r.classification,
                  "m": [float(v) for v in r.equilibrium.state.m]
                  if r.equilibrium else None}
                 for r in table.rows],
        "flips": [f.to_dict() for f in table.flips],
        "branch_births": table.branch_births,
        "branch_deaths": table.branch_deaths,
        "weak_stability_regression": regression,
    }
    report_io.write_json_atomic(_out(exp, "report.json"), payload)
    if exp.figures:
        plots.plot_sweep(table, _out(exp, "sweep.png"))
    flips = [f.refined_value for f in table.flips]
    print(f"wrote {_out(exp, 'sweep.csv')}; classification flips at {flips}")
    return EXIT_OK


def _cmd_plotdata(args) -> int:
    exp = _load(args)
    reports = _solve(exp)
    best = reports[0]
    exp.measure.write_csv(_out(exp, "measure.csv"))
    report_io.write_partition_csv(_out(exp, "partition.csv"), exp.measure,
                                  best.partition)
    borders = _borders_at(exp, best)
    if borders:
        report_io.write_borders_csv(_out(exp, "borders.csv"), borders)
    gaps = args.locus if args.locus is not None else exp.locus_gaps
    loci = []
    centers = _metric_centers(exp, best)
    if gaps and centers is not None and len(centers) >= 2 \
            and exp.measure.single().space.dimension == 2:
        space = exp.measure.single().space
        for gap in gaps:
            chains = indifference_locus(centers[0], centers[1], gap,
                                        lo=space.lo, hi=space.hi,
                                        grid_resolution=400)
            loci.append((gap, chains))
        report_io.write_locus_csv(_out(exp, "locus.csv"), loci)
    if exp.figures:
        plots.plot_partition(exp.measure, best.partition,
                             _out(exp, "partition.png"), borders=borders,
                             centers=centers)
        if borders and exp.measure.single().space.dimension == 2:
            plots.plot_borders(borders, _out(exp, "borders.png"))
        if loci:
            plots.plot_locus(loci, centers[:2], _out(exp, "locus.png"))
    print(f"wrote plot data to {exp.output_dir}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    with open(args.report) as fh:
        stored = json.load(fh)
    exp = build_experiment(_parse_toml(stored["config_text"]),
                           stored["config_text"])
    tolerance = args.tolerance if args.tolerance is not None \
        else exp.solver.tolerance
    failures = []
    results = []
    for idx, entry in enumerate(stored.get("equilibria", [])):
        state_dict = entry["state"]
        from .partition import NominalState
        state = NominalState(m=np.asarray(state_dict["m"]),
                             v=np.asarray(state_dict.get("v", [])),
                             z=np.asarray(state_dict.get("z", [])),
                             epsilon=float(state_dict.get("epsilon", 1e-3)))
        record = verify_equilibrium(exp.model, exp.measure, state, tolerance,
                                    exp.charspec, exp.providers or None,
                                    exp.solver.probe_grid)
        ok = record.within(tolerance)
        results.append({"index": idx, "ok": ok, **record.to_dict()})
        if not ok:
            failures.append(idx)
    print(json.dumps({"tolerance": tolerance, "results": results,
                      "failures": failures}, indent=2, sort_keys=True))
    return EXIT_OK if not failures else EXIT_ASSUMPTION


def _parse_toml(text: str) -> dict:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    return tomllib.loads(text)


def _cmd_validate(args) -> int:
    try:
        exp = load_config(args.config)
    except ConfigError as err:
        print(json.dumps({"status": "invalid", "error": err.to_dict()},
                         indent=2, sort_keys=True))
        return EXIT_CONFIG
    diagnostics = validate_experiment(exp)
    print(json.dumps(report_io._jsonable(diagnostics), indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "solve": _cmd_solve,
    "stability": _cmd_stability,
    "welfare": _cmd_welfare,
    "sweep": _cmd_sweep,
    "plotdata": _cmd_plotdata,
    "verify": _cmd_verify,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(json.dumps({"error": err.to_dict()}, indent=2, sort_keys=True),
              file=sys.stderr)
        return EXIT_CONFIG
    except (NoConvergenceError, CyclingDetectedError) as err:
        print(json.dumps({"error": err.to_dict()}, indent=2, sort_keys=True),
              file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (AssumptionViolatedError, Assumption2UnverifiedError,
            TieboutError) as err:
        print(json.dumps({"error": err.to_dict()}, indent=2, sort_keys=True),
              file=sys.stderr)
        return EXIT_ASSUMPTION


if __name__ == "__main__":
    sys.exit(main())
