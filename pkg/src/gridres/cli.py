"""Command-line front end tying the pipeline together.

Subcommands: baseline, robust, advset, simulate, synth, validate.  Every run
reads one scenario JSON, writes plot-ready CSV/JSON files plus a manifest into
--out, and exits with: 0 success, 1 input error, 2 optimization infeasible,
3 downstream infeasibility (e.g. an adversarial axis with no feasible
recourse).  Given equal inputs and seed, output files are byte-identical
across runs (the manifest records wall-clock timing and is exempt).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .advset import AxisInfeasible, InnerPolytope, characterize_steps, project_2d
from .dispatch import DispatchResult, InfeasibleDispatch, solve_baseline, summarize
from .network import save_model, validate
from .robust import ReserveSchedule, RobustResult, reserve_margin, solve_robust
from .scenario import (
    ManifestWriter,
    Scenario,
    ScenarioError,
    load_scenario,
    write_csv,
    write_json,
)
from .sim import events_from_polytopes, run_simulation, violation_report

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_DOWNSTREAM = 3

MW = 1.0e6


def _emit_dispatch_files(out: Path, scenario: Scenario, result: DispatchResult,
                         manifest: ManifestWriter) -> None:
    model = scenario.model
    agg = summarize(result)
    rows = []
    for k in range(model.steps):
        rows.append([
            k, float(k * model.dt_hours * 60.0),
            float(agg.pv_w[k] / MW), float(agg.dg_w[k] / MW), float(agg.es_w[k] / MW),
            float(agg.load_w[k] / MW),
            float(agg.pv_curtail_w[k] / MW), float(agg.load_curtail_w[k] / MW),
            float(agg.v_min_pu[k]), float(agg.v_max_pu[k]),
        ])
    write_csv(out / "aggregate.csv",
              ["step", "time_min", "pv_mw", "dg_mw", "es_mw", "load_mw",
               "pv_curtail_mw", "load_curtail_mw", "v_min_pu", "v_max_pu"], rows)
    manifest.add_output(out / "aggregate.csv")

    rows = []
    for (bus, phase) in sorted(result.voltage_sq_pu):
        series = result.voltage_sq_pu[(bus, phase)]
        for k in range(model.steps):
            rows.append([k, bus, phase, float(np.sqrt(series[k]))])
    write_csv(out / "voltage.csv", ["step", "bus", "phase", "v_pu"], rows)
    manifest.add_output(out / "voltage.csv")

    rows = []
    for uid in sorted(result.soc_wh):
        for k, val in enumerate(result.soc_wh[uid]):
            rows.append([k, uid, float(val / MW)])
    write_csv(out / "soc.csv", ["step", "unit", "soc_mwh"], rows)
    manifest.add_output(out / "soc.csv")


def cmd_baseline(scenario: Scenario, out: Path, manifest: ManifestWriter,
                 dump_lp: bool = False) -> int:
    if dump_lp:
        from .dispatch import build_baseline_lp

        lp, _ns, _block = build_baseline_lp(scenario.model, scenario.costs, scenario.build)
        (out / "problem.lp").write_text(lp.to_lp_text(f"{scenario.name}-baseline"))
        manifest.add_output(out / "problem.lp")
    result = solve_baseline(scenario.model, scenario.costs, scenario.build, scenario.solver)
    write_json(out / "dispatch.json", result.to_json_dict())
    manifest.add_output(out / "dispatch.json")
    _emit_dispatch_files(out, scenario, result, manifest)
    return EXIT_OK


def _solve_robust_for(scenario: Scenario) -> RobustResult:
    if not scenario.has_box:
        raise ScenarioError("scenario has no uncertainty box; nothing to robustify")
    return solve_robust(
        scenario.model, scenario.costs, scenario.reserve_costs, scenario.box,
        scenario.build, scenario.solver,
    )


def _emit_robust_files(out: Path, scenario: Scenario, robust: RobustResult,
                       manifest: ManifestWriter) -> None:
    model = scenario.model
    write_json(out / "robust.json", robust.to_json_dict())
    manifest.add_output(out / "robust.json")
    _emit_dispatch_files(out, scenario, robust.dispatch, manifest)

    rows = []
    for (cls_name, uid) in sorted(robust.reserves.up):
        for k in range(model.steps):
            rows.append([
                k, cls_name, uid,
                float(robust.reserves.up[(cls_name, uid)][k] / MW),
                float(robust.reserves.down[(cls_name, uid)][k] / MW),
            ])
    write_csv(out / "reserves.csv",
              ["step", "device_class", "device", "up_mw", "down_mw"], rows)
    manifest.add_output(out / "reserves.csv")

    rows = []
    for k in range(model.steps):
        up, down = reserve_margin(robust, k)
        rows.append([
            k, float(up / MW), float(down / MW),
            float(robust.worst_up_w[k] / MW), float(robust.worst_down_w[k] / MW),
        ])
    write_csv(out / "margins.csv",
              ["step", "up_total_mw", "down_total_mw", "worst_up_mw", "worst_down_mw"],
              rows)
    manifest.add_output(out / "margins.csv")


def cmd_robust(scenario: Scenario, out: Path, manifest: ManifestWriter,
               dump_lp: bool = False) -> int:
    if dump_lp:
        from .robust import build_robust_lp

        lp, *_rest = build_robust_lp(
            scenario.model, scenario.costs, scenario.reserve_costs, scenario.box,
            scenario.build,
        )
        (out / "problem.lp").write_text(lp.to_lp_text(f"{scenario.name}-robust"))
        manifest.add_output(out / "problem.lp")
    robust = _solve_robust_for(scenario)
    _emit_robust_files(out, scenario, robust, manifest)
    return EXIT_OK


def cmd_advset(scenario: Scenario, out: Path, manifest: ManifestWriter,
               projections: list[tuple[int, int, int]] = ()) -> int:
    """Tolerable-event set around the economic dispatch and its headroom.

    The characterization quantifies what the feeder's *available* flexibility
    can absorb: the baseline setpoints with reserve bands equal to each
    device's distance to its limits.  The paired dispatch/reserve file is
    emitted so `simulate --sample` can replay sampled events against exactly
    the flexibility that was assumed.
    """
    if not scenario.axes:
        raise ScenarioError("scenario declares no adversarial axes")
    base = solve_baseline(scenario.model, scenario.costs, scenario.build, scenario.solver)
    reserves = ReserveSchedule.from_headroom(scenario.model, base)
    robust = RobustResult(
        dispatch=base,
        reserves=reserves,
        objective_value=base.objective_value,
        reserve_cost=0.0,
        worst_up_w=np.zeros(scenario.model.steps),
        worst_down_w=np.zeros(scenario.model.steps),
    )
    _emit_robust_files(out, scenario, robust, manifest)
    polys = characterize_steps(
        scenario.model, robust.dispatch, robust.reserves, scenario.axes,
        scenario.advset_steps, scenario.build, scenario.solver,
    )

    write_json(out / "polytope.json",
               {"steps": {str(k): p.to_json_dict() for k, p in sorted(polys.items())}})
    manifest.add_output(out / "polytope.json")

    rows = []
    for k in sorted(polys):
        poly = polys[k]
        for i, axis in enumerate(poly.axes):
            rows.append([k, i, axis.kind, axis.entity, float(poly.alpha_w[i] / MW)])
    write_csv(out / "alpha.csv",
              ["step", "axis_index", "kind", "entity", "alpha_mw"], rows)
    manifest.add_output(out / "alpha.csv")

    for (i, j, k) in projections:
        if k not in polys:
            raise ScenarioError(f"--project step {k} was not characterized")
        poly = polys[k]
        if not (0 <= i < len(poly.axes) and 0 <= j < len(poly.axes)):
            raise ScenarioError(f"--project axes ({i}, {j}) out of range")
        hull, degenerate = project_2d(poly, i, j)
        name = f"polygon_{i}_{j}_{k}.csv"
        rows = [[float(x / MW), float(y / MW)] for x, y in hull]
        header = [f"axis{i}_{poly.axes[i].entity}_mw", f"axis{j}_{poly.axes[j].entity}_mw"]
        write_csv(out / name, header, rows)
        manifest.add_output(out / name)
        if degenerate:
            print(f"note: projection ({i},{j}) at step {k} is degenerate", file=sys.stderr)
    return EXIT_OK


def _trajectory_rows(model, traj) -> list[list]:
    rows = []
    series = [
        ("pv_mw", traj.pv_w / MW), ("dg_mw", traj.dg_w / MW), ("es_mw", traj.es_w / MW),
        ("served_load_mw", traj.served_load_w / MW),
        ("true_demand_mw", traj.true_demand_w / MW),
        ("shed_mw", traj.shed_w / MW),
        ("imbalance_mw", traj.imbalance_w / MW),
        ("deployed_up_mw", traj.deployed_up_w / MW),
        ("deployed_down_mw", traj.deployed_down_w / MW),
        ("shortfall_mw", traj.shortfall_w / MW),
        ("v_min_pu", traj.voltage_min_pu), ("v_max_pu", traj.voltage_max_pu),
    ]
    for k in range(model.steps):
        t = float(traj.time_min[k])
        for name, arr in series:
            rows.append([k, t, name, "", float(arr[k])])
        for uid in sorted(traj.soc_wh):
            rows.append([k, t, "soc_mwh", uid, float(traj.soc_wh[uid][k + 1] / MW)])
        for (cls_name, uid) in sorted(traj.deployment_w):
            rows.append([
                k, t, "deployment_mw", f"{cls_name}:{uid}",
                float(traj.deployment_w[(cls_name, uid)][k] / MW),
            ])
    return rows


def cmd_simulate(scenario: Scenario, out: Path, manifest: ManifestWriter,
                 robust_path: Path | None = None, polytope_path: Path | None = None,
                 sample: int | None = None, sample_seed: int | None = None) -> int:
    if robust_path is not None:
        try:
            robust = RobustResult.from_json_dict(json.loads(Path(robust_path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as err:
            raise ScenarioError(f"--robust {robust_path}: {err}") from err
        manifest.add_input(robust_path)
    else:
        robust = _solve_robust_for(scenario)

    if sample is None:
        traj = run_simulation(scenario.model, robust, scenario.timeline)
        write_csv(out / "trajectory.csv",
                  ["step", "time_min", "series", "entity", "value"],
                  _trajectory_rows(scenario.model, traj))
        manifest.add_output(out / "trajectory.csv")
        report = violation_report(traj)
        write_json(out / "violations.json",
                   {"counts": report.counts, "max_magnitude": report.max_magnitude,
                    "total": report.total})
        manifest.add_output(out / "violations.json")
        return EXIT_OK

    if polytope_path is None:
        raise ScenarioError("--sample needs --polytope pointing at an advset output")
    try:
        doc = json.loads(Path(polytope_path).read_text())
        polys = {
            int(k): InnerPolytope.from_json_dict(p) for k, p in doc["steps"].items()
        }
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        raise ScenarioError(f"--polytope {polytope_path}: {err}") from err
    manifest.add_input(polytope_path)

    seed = scenario.seed if sample_seed is None else sample_seed
    runs = events_from_polytopes(polys, seed=seed, count=sample)
    totals = {c: 0 for c in ("voltage", "soc", "line", "shortfall")}
    rows = []
    for r, per_step in enumerate(runs):
        traj = run_simulation(scenario.model, robust, per_step_events=per_step)
        report = violation_report(traj)
        rows.append([
            r, report.total,
            report.counts["voltage"], report.counts["soc"],
            report.counts["line"], report.counts["shortfall"],
        ])
        for c in totals:
            totals[c] += report.counts[c]
    write_csv(out / "samples.csv",
              ["run", "violations", "voltage", "soc", "line", "shortfall"], rows)
    manifest.add_output(out / "samples.csv")
    write_json(out / "violations.json",
               {"runs": sample, "counts": totals, "total": sum(totals.values())})
    manifest.add_output(out / "violations.json")
    return EXIT_OK


def cmd_synth(scenario: Scenario, out: Path, manifest: ManifestWriter) -> int:
    save_model(scenario.model, out / "network.json", out / "profiles.csv")
    manifest.add_output(out / "network.json")
    manifest.add_output(out / "profiles.csv")
    return EXIT_OK


def cmd_validate(scenario: Scenario) -> int:
    report = validate(scenario.model)
    doc = {"ok": report.ok, "problems": report.problems,
           "buses": len(scenario.model.buses), "steps": scenario.model.steps}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK if report.ok else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridres",
        description="Microgrid reserve dispatch and resilience analysis",
    )
    parser.add_argument("--version", action="version", version=f"gridres {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="path to the scenario JSON")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--poly-sides", type=int, default=None,
                       help="override the polygon side count for circle limits")
        p.add_argument("--feas-tol", type=float, default=None,
                       help="override the solver feasibility tolerance")

    p = sub.add_parser("baseline", help="solve the economic dispatch")
    common(p)
    p.add_argument("--dump-lp", action="store_true", help="also write the LP in text form")

    p = sub.add_parser("robust", help="solve the reserve-allocating dispatch")
    common(p)
    p.add_argument("--dump-lp", action="store_true")

    p = sub.add_parser("advset", help="characterize the tolerable adversarial set")
    common(p)
    p.add_argument("--project", nargs=3, type=int, action="append", default=[],
                   metavar=("I", "J", "K"),
                   help="emit the 2-D projection of axes I,J at step K")

    p = sub.add_parser("simulate", help="replay events against the robust schedule")
    common(p)
    p.add_argument("--robust", default=None, help="reuse a robust.json instead of solving")
    p.add_argument("--polytope", default=None, help="polytope.json from a prior advset run")
    p.add_argument("--sample", type=int, default=None,
                   help="draw N event sets from the polytope instead of the timeline")
    p.add_argument("--sample-seed", type=int, default=None,
                   help="seed for --sample draws (default: scenario seed)")

    p = sub.add_parser("synth", help="write the synthetic network and profiles to files")
    common(p)

    p = sub.add_parser("validate", help="check a scenario and its network")
    common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(
            args.scenario, seed_override=args.seed,
            poly_sides=args.poly_sides, feas_tol=args.feas_tol,
        )
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT

    manifest = ManifestWriter(args.command, scenario.seed)
    manifest.add_input(Path(args.scenario))

    out = Path(args.out)
    if args.command != "validate":
        out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "baseline":
            code = cmd_baseline(scenario, out, manifest, dump_lp=args.dump_lp)
        elif args.command == "robust":
            code = cmd_robust(scenario, out, manifest, dump_lp=args.dump_lp)
        elif args.command == "advset":
            code = cmd_advset(scenario, out, manifest,
                              projections=[tuple(p) for p in args.project])
        elif args.command == "simulate":
            code = cmd_simulate(
                scenario, out, manifest,
                robust_path=Path(args.robust) if args.robust else None,
                polytope_path=Path(args.polytope) if args.polytope else None,
                sample=args.sample, sample_seed=args.sample_seed,
            )
        elif args.command == "synth":
            code = cmd_synth(scenario, out, manifest)
        else:
            return cmd_validate(scenario)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleDispatch as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except AxisInfeasible as err:
        print(f"downstream infeasibility: {err}", file=sys.stderr)
        return EXIT_DOWNSTREAM

    manifest.write(out)
    return code


def entrypoint() -> None:  # console-script shim
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
