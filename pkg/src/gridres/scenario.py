"""Scenario files: one JSON document that drives every pipeline stage.

A scenario names the network (an inline synthetic recipe or file references),
cost weights, solver knobs, the uncertainty box, adversarial axes, the event
timeline, and a single seed that governs all randomness.  Seeds are split
into named streams through ``numpy.random.SeedSequence(entropy=seed,
spawn_key=(stream,))``: stream 0 builds synthetic feeders, stream 2 draws
polytope samples, stream 3 draws per-step event samples.

Output files are written with deterministic ordering and repr-exact floats so
re-runs with equal inputs are byte-identical; the run manifest (which records
wall-clock timing) is the one deliberately non-reproducible artifact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .advset import AdversarialAxis
from .constraints import (
    BuildOptions,
    P_DG_CAPACITY,
    P_LOAD_DESIRED,
    P_PV_FORECAST,
)
from .dispatch import CostConfig
from .lp import SolverOptions
from .network import NetworkModel, SynthSpec, load_model, synth_feeder, validate
from .robust import ReserveCosts, UncertaintyBox
from .sim import Event, EventTimeline

SCHEMA_VERSION = 1

PARAM_NAMES = {
    "dg_capacity": P_DG_CAPACITY,
    "load_desired": P_LOAD_DESIRED,
    "pv_forecast": P_PV_FORECAST,
}


class ScenarioError(ValueError):
    """A scenario file is malformed; the message names the offending field."""


@dataclass
class Scenario:
    name: str
    seed: int
    model: NetworkModel
    costs: CostConfig
    reserve_costs: ReserveCosts
    solver: SolverOptions
    build: BuildOptions
    box: UncertaintyBox
    axes: list[AdversarialAxis]
    advset_steps: list[int]
    timeline: EventTimeline
    source_path: Path | None = None

    @property
    def has_box(self) -> bool:
        return bool(self.box.entries)


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ScenarioError(f"{context}: missing required field {key!r}")
    return doc[key]


def _nominal_of(model: NetworkModel, param: str, entity: str, step: int) -> float:
    if param == P_DG_CAPACITY:
        return next(u.capacity_va for u in model.dg_units if u.id == entity)
    if param == P_PV_FORECAST:
        return float(next(u.forecast_w[step] for u in model.pv_units if u.id == entity))
    return float(next(u.desired_w[step] for u in model.loads if u.id == entity))


def _parse_box(doc: list, model: NetworkModel) -> UncertaintyBox:
    box = UncertaintyBox()
    for i, entry in enumerate(doc):
        ctx = f"uncertainty[{i}]"
        raw = _require(entry, "parameter", ctx)
        if raw not in PARAM_NAMES:
            raise ScenarioError(f"{ctx}: unknown parameter {raw!r}")
        param = PARAM_NAMES[raw]
        entity = _require(entry, "entity", ctx)
        a, b = _require(entry, "steps", ctx)
        for k in range(int(a), int(b)):
            nom = _nominal_of(model, param, entity, k)
            lo = hi = nom
            if "low_w" in entry:
                lo = float(entry["low_w"])
            if "low_scale" in entry:
                lo = nom * float(entry["low_scale"])
            if "low_sub_w" in entry:
                lo = nom - float(entry["low_sub_w"])
            if "high_w" in entry:
                hi = float(entry["high_w"])
            if "high_scale" in entry:
                hi = nom * float(entry["high_scale"])
            if "high_add_w" in entry:
                hi = nom + float(entry["high_add_w"])
            try:
                box.add(param, entity, k, lo, nom, hi)
            except ValueError as err:
                raise ScenarioError(f"{ctx}: {err}") from err
    return box


def load_scenario(path, seed_override: int | None = None,
                  poly_sides: int | None = None,
                  feas_tol: float | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario {path}: {err}") from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ScenarioError(
            f"scenario {path} is not valid JSON at byte offset {err.pos}: {err.msg}"
        ) from err

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    seed = int(doc.get("seed", 0)) if seed_override is None else int(seed_override)

    net = _require(doc, "network", "scenario")
    if "synth" in net:
        synth = dict(net["synth"])
        synth.setdefault("seed", seed)
        try:
            spec = SynthSpec(**synth)
            model = synth_feeder(spec)
        except (TypeError, ValueError) as err:
            raise ScenarioError(f"network.synth: {err}") from err
    elif "files" in net:
        files = net["files"]
        base = path.parent
        try:
            model = load_model(base / _require(files, "network", "network.files"),
                               base / _require(files, "profiles", "network.files"))
        except (OSError, ValueError, KeyError) as err:
            raise ScenarioError(f"network.files: {err}") from err
    else:
        raise ScenarioError("network: needs either 'synth' or 'files'")

    report = validate(model)
    if not report.ok:
        raise ScenarioError("network failed validation: " + "; ".join(report.problems))

    costs_doc = doc.get("costs", {})
    costs = CostConfig(
        dg_energy=float(costs_doc.get("dg_energy", 1.0)),
        pv_curtail=float(costs_doc.get("pv_curtail", 0.1)),
        load_curtail=float(costs_doc.get("load_curtail", 10.0)),
    )
    factors = doc.get("reserve_cost_factors")
    if factors is None:
        reserve_costs = ReserveCosts.from_costs(costs)
    else:
        reserve_costs = ReserveCosts(
            pv=float(factors.get("pv", 0.2)) * costs.pv_curtail,
            dg=float(factors.get("dg", 0.2)) * costs.dg_energy,
            es=float(factors.get("es", 0.15)) * costs.dg_energy,
            load=float(factors.get("load", 0.2)) * costs.load_curtail,
        )

    solver_doc = doc.get("solver", {})
    solver = SolverOptions(
        feas_tol=float(solver_doc.get("feas_tol", 1e-7)) if feas_tol is None else feas_tol,
        opt_tol=float(solver_doc.get("opt_tol", 1e-7)),
        pricing=solver_doc.get("pricing", "bland"),
        backend=solver_doc.get("backend", "simplex"),
    )
    build_doc = doc.get("build", {})
    build = BuildOptions(
        poly_sides=int(build_doc.get("poly_sides", 8)) if poly_sides is None else poly_sides,
        pv_power_factor_gamma=build_doc.get("pv_power_factor_gamma"),
        terminal_soc_geq_initial=bool(build_doc.get("terminal_soc_geq_initial", False)),
    )

    box = _parse_box(doc.get("uncertainty", []), model)
    try:
        box.validate(model)
    except ValueError as err:
        raise ScenarioError(f"uncertainty: {err}") from err

    axis_entities = {
        "dg_capacity_loss": {u.id for u in model.dg_units},
        "load_increase": {u.id for u in model.loads},
        "pv_forecast_error": {u.id for u in model.pv_units},
    }
    axes = []
    for i, a in enumerate(doc.get("axes", [])):
        try:
            axis = AdversarialAxis(
                _require(a, "kind", f"axes[{i}]"),
                _require(a, "entity", f"axes[{i}]"),
                a.get("cap_w"),
            )
        except ValueError as err:
            raise ScenarioError(f"axes[{i}]: {err}") from err
        if axis.entity not in axis_entities[axis.kind]:
            raise ScenarioError(f"axes[{i}]: unknown entity {axis.entity!r} for {axis.kind}")
        axes.append(axis)

    advset_steps = [int(k) for k in doc.get("advset_steps", range(model.steps))]
    for k in advset_steps:
        if not 0 <= k < model.steps:
            raise ScenarioError(f"advset_steps: step {k} outside horizon")

    events = []
    for i, e in enumerate(doc.get("timeline", [])):
        events.append(
            Event(
                float(_require(e, "time_min", f"timeline[{i}]")),
                _require(e, "kind", f"timeline[{i}]"),
                _require(e, "entity", f"timeline[{i}]"),
                e.get("magnitude_w"),
            )
        )
    timeline = EventTimeline(events)
    try:
        timeline.validate(model)
    except ValueError as err:
        raise ScenarioError(f"timeline: {err}") from err

    return Scenario(
        name=doc.get("name", path.stem),
        seed=seed,
        model=model,
        costs=costs,
        reserve_costs=reserve_costs,
        solver=solver,
        build=build,
        box=box,
        axes=axes,
        advset_steps=advset_steps,
        timeline=timeline,
        source_path=path,
    )


# ---------------------------------------------------------------------------
# deterministic file emission


def fmt(value: float) -> str:
    return repr(float(value))


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return "sha256:" + digest.hexdigest()


class ManifestWriter:
    """Records inputs, outputs, seed, and timing of one CLI run."""

    def __init__(self, command: str, seed: int):
        self.command = command
        self.seed = seed
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self._t0 = time.perf_counter()

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = sha256_of(path)

    def add_output(self, path: Path) -> None:
        self.outputs.append(Path(path).name)

    def write(self, out_dir: Path) -> Path:
        doc = {
            "tool": "gridres",
            "version": __version__,
            "command": self.command,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "timing_s": round(time.perf_counter() - self._t0, 6),
        }
        path = Path(out_dir) / "manifest.json"
        write_json(path, doc)
        return path
