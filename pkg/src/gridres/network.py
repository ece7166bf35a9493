"""Radial feeder data model: buses, branches, DER devices, limits, profiles.

All quantities are stored in SI units (V, VA, W, Wh, ohm); conversion to per
unit happens in the constraint builder.  The first bus in the list is the
voltage reference.  Models are plain dataclasses and should be treated as
immutable once :func:`validate` has passed.

On-disk formats (see docs/formats.md):
  * network JSON: buses / branches / devices / base quantities / horizon
  * profiles CSV with header ``time,entity_id,field,value`` (time = step index)
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

PHASES = "abc"


def _phase_key(pair: str) -> str:
    a, b = sorted(pair)
    return a + b


@dataclass
class Bus:
    id: str
    phases: str  # non-empty subset of "abc", sorted
    v_min: float = 0.95  # pu magnitude
    v_max: float = 1.05


@dataclass
class Branch:
    from_bus: str
    to_bus: str
    phases: str
    impedance_ohm: dict[str, complex]  # keyed by sorted phase pair, e.g. "aa", "ab"
    flow_limit_va: float  # per phase

    @property
    def id(self) -> str:
        return f"{self.from_bus}->{self.to_bus}"

    def z(self, p: str, q: str) -> complex:
        return self.impedance_ohm.get(_phase_key(p + q), 0j)


@dataclass
class PvUnit:
    id: str
    bus: str
    capacity_va: float  # inverter rating
    forecast_w: np.ndarray  # available active power per step


@dataclass
class DgUnit:
    id: str
    bus: str
    capacity_va: float  # rated size


@dataclass
class StorageUnit:
    id: str
    bus: str
    power_w: float  # max |charge/discharge|
    energy_min_wh: float
    energy_max_wh: float
    capacity_va: float  # inverter rating
    initial_soc_wh: float


@dataclass
class LoadPoint:
    id: str
    bus: str
    desired_w: np.ndarray
    minimum_w: np.ndarray  # critically necessary part of the demand
    power_factor: float = 0.9  # reactive demand follows active through this

    def q_of(self, p: float | np.ndarray):
        return p * math.tan(math.acos(self.power_factor))


@dataclass
class BaseQuantities:
    voltage_ll_v: float = 4160.0
    power_va: float = 1.0e6


@dataclass
class NetworkModel:
    buses: list[Bus]
    branches: list[Branch]
    pv_units: list[PvUnit]
    dg_units: list[DgUnit]
    storage_units: list[StorageUnit]
    loads: list[LoadPoint]
    steps: int
    dt_hours: float
    base: BaseQuantities = field(default_factory=BaseQuantities)

    @property
    def root(self) -> Bus:
        return self.buses[0]

    def bus(self, bus_id: str) -> Bus:
        return self._bus_map()[bus_id]

    def _bus_map(self) -> dict[str, Bus]:
        return {b.id: b for b in self.buses}

    def devices(self):
        return [*self.pv_units, *self.dg_units, *self.storage_units, *self.loads]

    def parent_branch(self) -> dict[str, Branch]:
        """Map each non-root bus to the branch feeding it (assumes validity)."""
        order, parent = self._bfs()
        return parent

    def _bfs(self):
        adj: dict[str, list[Branch]] = {b.id: [] for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].append(br)
            adj[br.to_bus].append(br)
        root = self.root.id
        seen = {root}
        order = [root]
        parent: dict[str, Branch] = {}
        queue = [root]
        while queue:
            cur = queue.pop(0)
            for br in adj[cur]:
                nxt = br.to_bus if br.from_bus == cur else br.from_bus
                if nxt not in seen:
                    seen.add(nxt)
                    parent[nxt] = br
                    order.append(nxt)
                    queue.append(nxt)
        return order, parent

    def children(self) -> dict[str, list[str]]:
        _, parent = self._bfs()
        out: dict[str, list[str]] = {b.id: [] for b in self.buses}
        for bus_id, br in parent.items():
            other = br.from_bus if br.to_bus == bus_id else br.to_bus
            out[other].append(bus_id)
        return out


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def validate(model: NetworkModel) -> ValidationReport:
    """Check every structural invariant; an empty report means the model is usable."""
    problems: list[str] = []
    ids = [b.id for b in model.buses]
    bus_map = {}
    for b in model.buses:
        if b.id in bus_map:
            problems.append(f"duplicate bus id {b.id}")
        bus_map[b.id] = b
        if not b.phases or any(p not in PHASES for p in b.phases):
            problems.append(f"bus {b.id}: invalid phase set {b.phases!r}")
        if not 0 < b.v_min < b.v_max:
            problems.append(f"bus {b.id}: voltage bounds must satisfy 0 < v_min < v_max")

    for br in model.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in bus_map:
                problems.append(f"branch {br.id}: unknown bus {end}")
        if br.flow_limit_va <= 0:
            problems.append(f"branch {br.id}: flow_limit_va must be positive")
        for pair, z in br.impedance_ohm.items():
            if not (math.isfinite(z.real) and math.isfinite(z.imag)):
                problems.append(f"branch {br.id}: non-finite impedance on {pair}")

    # connectivity and radiality
    if len(model.branches) != len(model.buses) - 1:
        problems.append(
            f"not radial: {len(model.branches)} branches for {len(model.buses)} buses"
        )
    order, parent = model._bfs()
    if len(order) != len(model.buses):
        missing = sorted(set(ids) - set(order))
        problems.append(f"disconnected buses: {', '.join(missing)}")
    elif len(model.branches) >= len(model.buses):
        problems.append("cycle detected (branch count >= bus count)")

    # phase compatibility down the tree
    if not problems:
        for bus_id, br in parent.items():
            bus = bus_map[bus_id]
            up = br.from_bus if br.to_bus == bus_id else br.to_bus
            if not set(br.phases) <= set(bus_map[up].phases):
                problems.append(f"branch {br.id}: phases {br.phases} not in upstream bus {up}")
            if not set(bus.phases) <= set(br.phases):
                problems.append(f"bus {bus_id}: phases {bus.phases} not carried by branch {br.id}")

    for dev in model.devices():
        if dev.bus not in bus_map:
            problems.append(f"device {dev.id}: unknown bus {dev.bus}")

    for pv in model.pv_units:
        if pv.capacity_va <= 0:
            problems.append(f"pv {pv.id}: capacity must be positive")
        if len(pv.forecast_w) != model.steps:
            problems.append(f"pv {pv.id}: forecast length {len(pv.forecast_w)} != {model.steps}")
        elif np.any(np.asarray(pv.forecast_w) < 0):
            problems.append(f"pv {pv.id}: negative forecast")
    for dg in model.dg_units:
        if dg.capacity_va <= 0:
            problems.append(f"dg {dg.id}: capacity must be positive")
    for es in model.storage_units:
        if not 0 <= es.energy_min_wh < es.energy_max_wh:
            problems.append(f"storage {es.id}: need 0 <= energy_min < energy_max")
        if es.power_w <= 0:
            problems.append(f"storage {es.id}: power rating must be positive")
        if not es.energy_min_wh <= es.initial_soc_wh <= es.energy_max_wh:
            problems.append(f"storage {es.id}: initial SoC outside energy limits")
    for ld in model.loads:
        des = np.asarray(ld.desired_w)
        mn = np.asarray(ld.minimum_w)
        if len(des) != model.steps or len(mn) != model.steps:
            problems.append(f"load {ld.id}: profile length != {model.steps}")
        elif np.any(mn < -1e-9) or np.any(mn > des + 1e-9):
            problems.append(f"load {ld.id}: need 0 <= minimum <= desired at every step")
        if not 0 < ld.power_factor <= 1:
            problems.append(f"load {ld.id}: power factor must be in (0, 1]")

    if model.steps <= 0:
        problems.append("horizon must have at least one step")
    if model.dt_hours <= 0:
        problems.append("dt_hours must be positive")

    return ValidationReport(problems)


# ---------------------------------------------------------------------------
# synthetic feeders


PROFILE_PRESETS: dict[str, dict[str, list[float]]] = {
    # morning: high but slowly declining load, solar ramping up
    "low_solar_high_load": {
        "load": [1.00, 0.99, 0.98, 0.97, 0.96, 0.95, 0.94, 0.93, 0.92, 0.91, 0.90, 0.89],
        "pv": [0.02, 0.10, 0.18, 0.28, 0.38, 0.48, 0.58, 0.66, 0.72, 0.76, 0.78, 0.80],
    },
    # midday: low load, abundant solar
    "high_solar_low_load": {
        "load": [0.30, 0.31, 0.32, 0.33, 0.34, 0.35, 0.36, 0.35, 0.34, 0.33, 0.32, 0.31],
        "pv": [0.82, 0.86, 0.90, 0.93, 0.95, 0.97, 0.98, 0.97, 0.95, 0.93, 0.90, 0.88],
    },
    # steady shoulder-period day used for event studies; load tracks the solar
    # ramp so the diesel requirement stays near the fleet total all day
    "event_day": {
        "load": [0.8484, 0.8585, 0.8687, 0.8788, 0.8889, 0.9041, 0.9142, 0.9244,
                 0.9345, 0.9395, 0.9446, 0.9496],
        "pv": [0.35, 0.37, 0.39, 0.41, 0.43, 0.46, 0.48, 0.50, 0.52, 0.53, 0.54, 0.55],
    },
}


@dataclass
class SynthSpec:
    """Recipe for a deterministic synthetic radial feeder.

    Aggregate ratings are split across the generated units so that their sums
    match the recipe exactly.  The defaults reproduce the aggregate ratings
    of a mid-size distribution feeder: 3.5 MW / 1.9 MVAR peak load, 2.5 MW of
    diesel, 1.77 MW of PV, and 1.5 MW / 6 MWh of storage.
    """

    buses: int = 10
    seed: int = 1
    peak_load_w: float = 3.5e6
    peak_load_var: float = 1.9e6
    dg_total_va: float = 2.5e6
    pv_total_va: float = 1.77e6
    storage_power_w: float = 1.5e6
    storage_energy_wh: float = 6.0e6
    n_dg: int = 3
    n_pv: int = 4
    n_storage: int = 3
    n_loads: int = 6
    steps: int = 12
    dt_hours: float = 5.0 / 60.0
    profile: str = "event_day"
    initial_soc: str = "mid"  # "low" | "mid" | "high" | "seeded"
    three_phase_buses: int = 3  # buses nearest the root carry all three phases
    # balanced mode keeps per-phase load exactly a third of the total, so
    # aggregate capacity arguments carry over phase by phase; it places the
    # generation fleet on the three-phase trunk and needs n_loads % 3 == 0
    balanced_phases: bool = True
    # per-phase conductor ratings; generous because reserve deployment is
    # network-blind and event response must not ride the line limits
    trunk_limit_va: float = 2.4e6
    lateral_limit_va: float = 1.8e6
    v_min: float = 0.95
    v_max: float = 1.05
    base_voltage_ll_v: float = 4160.0
    base_power_va: float = 1.0e6


def _split_total(total: float, n: int, rng: np.random.Generator, spread: float = 0.5) -> list[float]:
    """n positive parts summing to `total` exactly (last part closes the sum)."""
    if n == 1:
        return [total]
    weights = 1.0 + spread * rng.uniform(-1.0, 1.0, size=n)
    weights = weights / weights.sum()
    parts = [float(total * w) for w in weights[:-1]]
    parts.append(total - sum(parts))
    return parts


def synth_feeder(spec: SynthSpec) -> NetworkModel:
    """Build a deterministic radial feeder matching the recipe's aggregate ratings."""
    if spec.buses < 1:
        raise ValueError("need at least one bus")
    if spec.buses == 1 and spec.n_loads > 1:
        raise ValueError("single-bus feeder cannot host multiple load points")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(0,)))

    n3 = min(spec.three_phase_buses, spec.buses)
    buses = []
    for i in range(spec.buses):
        phases = "abc" if i < n3 else PHASES[(i - n3) % 3]
        buses.append(Bus(f"bus{i:02d}", phases, spec.v_min, spec.v_max))

    z_base = spec.base_voltage_ll_v**2 / (3.0 * spec.base_power_va)
    branches = []
    for i in range(1, spec.buses):
        if i < n3:
            parent = i - 1  # three-phase trunk is a chain from the root
        else:
            parent = int(rng.integers(0, n3)) if n3 > 0 else int(rng.integers(0, i))
        child = buses[i]
        trunk = i < n3
        r_pu = float(rng.uniform(0.0008, 0.0020)) if trunk else float(rng.uniform(0.0015, 0.0040))
        z = (r_pu + 2.0j * r_pu) * z_base
        imped = {p + p: z for p in child.phases}
        limit = spec.trunk_limit_va if trunk else spec.lateral_limit_va
        branches.append(Branch(buses[parent].id, child.id, child.phases, imped, limit))

    model_buses = [b.id for b in buses]
    trunk_ids = model_buses[:n3]
    lateral_by_phase: dict[str, list[str]] = {p: [] for p in PHASES}
    for b in buses[n3:]:
        lateral_by_phase[b.phases].append(b.id)

    def pick(pool: list[str], n: int) -> list[str]:
        if n <= len(pool):
            idx = rng.choice(len(pool), size=n, replace=False)
        else:
            idx = rng.choice(len(pool), size=n, replace=True)
        return [pool[int(i)] for i in idx]

    preset = PROFILE_PRESETS[spec.profile]
    load_shape = np.asarray(preset["load"], dtype=float)
    pv_shape = np.asarray(preset["pv"], dtype=float)
    if len(load_shape) != spec.steps:
        # resample the 12-point presets onto the requested horizon
        xi = np.linspace(0.0, 1.0, spec.steps)
        x0 = np.linspace(0.0, 1.0, len(load_shape))
        load_shape = np.interp(xi, x0, load_shape)
        pv_shape = np.interp(xi, x0, pv_shape)

    pf = math.cos(math.atan(spec.peak_load_var / spec.peak_load_w))
    loads = []
    if spec.balanced_phases:
        if spec.n_loads % 3:
            raise ValueError("balanced_phases needs n_loads divisible by 3")
        per_group = spec.n_loads // 3
        third = spec.peak_load_w / 3.0
        group_totals = [third, third, spec.peak_load_w - 2.0 * third]
        i = 0
        for g, phase in enumerate(PHASES):
            hosts = lateral_by_phase[phase] or [model_buses[0]]
            for j, peak in enumerate(_split_total(group_totals[g], per_group, rng)):
                bus_id = hosts[j % len(hosts)]
                desired = peak * load_shape
                min_frac = float(rng.uniform(0.35, 0.55))
                loads.append(
                    LoadPoint(f"load{i + 1:02d}", bus_id, desired, min_frac * desired, pf)
                )
                i += 1
        device_pool = trunk_ids
    else:
        pool = model_buses[1:] if len(model_buses) > 1 else model_buses
        for i, (bus_id, peak) in enumerate(
            zip(pick(pool, spec.n_loads), _split_total(spec.peak_load_w, spec.n_loads, rng))
        ):
            desired = peak * load_shape
            min_frac = float(rng.uniform(0.35, 0.55))
            loads.append(
                LoadPoint(f"load{i + 1:02d}", bus_id, desired, min_frac * desired, pf)
            )
        device_pool = model_buses

    dg_caps = sorted(_split_total(spec.dg_total_va, spec.n_dg, rng), reverse=True)
    dgs = [
        DgUnit(f"dg{i + 1:02d}", bus_id, cap)
        for i, (bus_id, cap) in enumerate(zip(pick(device_pool, spec.n_dg), dg_caps))
    ]

    pv_caps = _split_total(spec.pv_total_va, spec.n_pv, rng)
    pvs = [
        PvUnit(f"pv{i + 1:02d}", bus_id, cap, cap * pv_shape)
        for i, (bus_id, cap) in enumerate(zip(pick(device_pool, spec.n_pv), pv_caps))
    ]

    es_powers = _split_total(spec.storage_power_w, spec.n_storage, rng)
    es_energies = _split_total(spec.storage_energy_wh, spec.n_storage, rng)
    storages = []
    for i, (bus_id, p, e) in enumerate(zip(pick(device_pool, spec.n_storage), es_powers, es_energies)):
        # the unit's energy capacity is its SoC ceiling; the floor protects
        # battery life, so the capacities sum to the recipe's aggregate
        e_min, e_max = 0.10 * e, e
        if spec.initial_soc == "low":
            soc0 = e_min
        elif spec.initial_soc == "high":
            soc0 = e_max
        elif spec.initial_soc == "mid":
            soc0 = 0.5 * (e_min + e_max)
        else:
            soc0 = float(rng.uniform(e_min + 0.1 * e, e_max - 0.1 * e))
        storages.append(
            StorageUnit(f"es{i + 1:02d}", bus_id, p, e_min, e_max, 1.25 * p, soc0)
        )

    model = NetworkModel(
        buses=buses,
        branches=branches,
        pv_units=pvs,
        dg_units=dgs,
        storage_units=storages,
        loads=loads,
        steps=spec.steps,
        dt_hours=spec.dt_hours,
        base=BaseQuantities(spec.base_voltage_ll_v, spec.base_power_va),
    )
    report = validate(model)
    if not report.ok:
        raise ValueError("synthesized feeder failed validation: " + "; ".join(report.problems))
    return model


# ---------------------------------------------------------------------------
# serialization


def to_json_dict(model: NetworkModel) -> dict:
    return {
        "schema_version": 1,
        "base": {
            "voltage_ll_v": model.base.voltage_ll_v,
            "power_va": model.base.power_va,
        },
        "horizon": {"steps": model.steps, "dt_hours": model.dt_hours},
        "buses": [
            {"id": b.id, "phases": b.phases, "v_min": b.v_min, "v_max": b.v_max}
            for b in model.buses
        ],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "phases": br.phases,
                "impedance_ohm": {
                    pair: [z.real, z.imag] for pair, z in sorted(br.impedance_ohm.items())
                },
                "flow_limit_va": br.flow_limit_va,
            }
            for br in model.branches
        ],
        "pv": [
            {"id": u.id, "bus": u.bus, "capacity_va": u.capacity_va} for u in model.pv_units
        ],
        "dg": [
            {"id": u.id, "bus": u.bus, "capacity_va": u.capacity_va} for u in model.dg_units
        ],
        "storage": [
            {
                "id": u.id,
                "bus": u.bus,
                "power_w": u.power_w,
                "energy_min_wh": u.energy_min_wh,
                "energy_max_wh": u.energy_max_wh,
                "capacity_va": u.capacity_va,
                "initial_soc_wh": u.initial_soc_wh,
            }
            for u in model.storage_units
        ],
        "loads": [
            {"id": u.id, "bus": u.bus, "power_factor": u.power_factor} for u in model.loads
        ],
    }


def profiles_rows(model: NetworkModel) -> list[tuple[int, str, str, float]]:
    rows = []
    for k in range(model.steps):
        for pv in model.pv_units:
            rows.append((k, pv.id, "pv_forecast_w", float(pv.forecast_w[k])))
        for ld in model.loads:
            rows.append((k, ld.id, "load_desired_w", float(ld.desired_w[k])))
            rows.append((k, ld.id, "load_minimum_w", float(ld.minimum_w[k])))
    return rows


def save_model(model: NetworkModel, network_path, profiles_path) -> None:
    with open(network_path, "w") as f:
        json.dump(to_json_dict(model), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(profiles_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["time", "entity_id", "field", "value"])
        for k, ent, fieldname, value in profiles_rows(model):
            writer.writerow([k, ent, fieldname, repr(value)])


def from_json_dict(doc: dict, profiles: list[tuple[int, str, str, float]]) -> NetworkModel:
    steps = int(doc["horizon"]["steps"])
    series: dict[tuple[str, str], np.ndarray] = {}
    for k, ent, fieldname, value in profiles:
        arr = series.setdefault((ent, fieldname), np.zeros(steps))
        arr[int(k)] = value

    buses = [Bus(d["id"], d["phases"], d["v_min"], d["v_max"]) for d in doc["buses"]]
    branches = [
        Branch(
            d["from"],
            d["to"],
            d["phases"],
            {pair: complex(ri[0], ri[1]) for pair, ri in d["impedance_ohm"].items()},
            d["flow_limit_va"],
        )
        for d in doc["branches"]
    ]
    pvs = [
        PvUnit(d["id"], d["bus"], d["capacity_va"], series.get((d["id"], "pv_forecast_w"), np.zeros(steps)))
        for d in doc["pv"]
    ]
    dgs = [DgUnit(d["id"], d["bus"], d["capacity_va"]) for d in doc["dg"]]
    storages = [
        StorageUnit(
            d["id"], d["bus"], d["power_w"], d["energy_min_wh"], d["energy_max_wh"],
            d["capacity_va"], d["initial_soc_wh"],
        )
        for d in doc["storage"]
    ]
    loads = [
        LoadPoint(
            d["id"], d["bus"],
            series.get((d["id"], "load_desired_w"), np.zeros(steps)),
            series.get((d["id"], "load_minimum_w"), np.zeros(steps)),
            d["power_factor"],
        )
        for d in doc["loads"]
    ]
    return NetworkModel(
        buses=buses,
        branches=branches,
        pv_units=pvs,
        dg_units=dgs,
        storage_units=storages,
        loads=loads,
        steps=steps,
        dt_hours=float(doc["horizon"]["dt_hours"]),
        base=BaseQuantities(doc["base"]["voltage_ll_v"], doc["base"]["power_va"]),
    )


def read_profiles_csv(path) -> list[tuple[int, str, str, float]]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["time", "entity_id", "field", "value"]:
            raise ValueError(f"unexpected profiles header: {header}")
        for rec in reader:
            rows.append((int(rec[0]), rec[1], rec[2], float(rec[3])))
    return rows


def load_model(network_path, profiles_path) -> NetworkModel:
    with open(network_path) as f:
        doc = json.load(f)
    return from_json_dict(doc, read_profiles_csv(profiles_path))
