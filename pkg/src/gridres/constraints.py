"""Lower feeder physics and device limits into linear-program rows.

The linearized branch-flow voltage equation used throughout is, per branch
(n -> m), phase, and step:

    w_m = w_n - 2 (r_eff P + x_eff Q)

where w is the squared voltage magnitude (pu^2), P/Q the branch flow (pu) and
(r_eff + j x_eff) the effective per-phase impedance under the balanced
rotation approximation:

    z_eff(phi) = sum_psi  a_phi * conj(a_psi) * z(phi, psi),
    a = (1, e^{-j2pi/3}, e^{+j2pi/3}) for phases (a, b, c)

restricted to the branch's phases.  Off-diagonal coupling beyond this
rotation is out of scope.  Apparent-power circles |(P, Q)| <= S are replaced
by an inscribed regular polygon: for t = 0..sides-1 and theta_t =
pi(2t+1)/sides,

    cos(theta_t) P + sin(theta_t) Q <= S cos(pi/sides)

which is conservative (polygon inside the circle) and keeps every problem an
LP.

Variable ordering is deterministic: variable kind, then entity id (sorted),
then phase (a < b < c), then step.  Device injections are per device (not per
phase) and split equally across the phases of the hosting bus.

Row-count formulas per tag (K = steps, sides = polygon sides):
    voltage_drop     sum_branch |phases| * K
    power_balance    2 * sum_bus |phases| * K      (net injections folded in)
    power_factor     n_load * K  (+ 2 * n_pv * K when a PV gamma is set)
    storage          n_es * K recursion rows + n_es * K * sides inverter rows
                     (+ n_es terminal rows when the terminal-SoC flag is set)
    pv_cap           n_pv * K * sides
    dg_cap           n_dg * K * sides
    line_limits      sum_branch |phases| * K * sides
    voltage_limits   bounds on every w variable (no rows)
    curtailment_bounds  bounds on every ppv and pload variable (no rows)
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

from .lp import LinearProgram, Rel
from .network import NetworkModel

# uncertain-parameter key: (kind, entity id, step)
ParamKey = tuple[str, str, int]

P_DG_CAPACITY = "dg_capacity"
P_LOAD_DESIRED = "load_desired"
P_PV_FORECAST = "pv_forecast"

RESERVE_CLASSES = ("pv", "dg", "es", "load")

_ROTATION = {
    "a": 1.0 + 0.0j,
    "b": cmath.exp(-2j * math.pi / 3.0),
    "c": cmath.exp(2j * math.pi / 3.0),
}


@dataclass
class PerUnit:
    s_base: float
    z_base: float

    @classmethod
    def of(cls, model: NetworkModel) -> "PerUnit":
        s = model.base.power_va
        return cls(s, model.base.voltage_ll_v**2 / (3.0 * s))

    def power(self, watts: float) -> float:
        return watts / self.s_base

    def energy(self, wh: float) -> float:
        return wh / self.s_base  # pu-hours

    def impedance(self, ohm: complex) -> complex:
        return ohm / self.z_base


def effective_impedance_pu(branch, phase: str, pu: PerUnit) -> complex:
    """Balanced-rotation effective impedance seen by one phase of a branch."""
    z = 0.0 + 0.0j
    for psi in branch.phases:
        z += _ROTATION[phase] * _ROTATION[psi].conjugate() * pu.impedance(branch.z(phase, psi))
    return z


def polygon_rows(sides: int) -> list[tuple[float, float, float]]:
    """(cos, sin, offset_factor) triples for the inscribed polygon of a unit circle."""
    if sides < 3:
        raise ValueError("polygon needs at least 3 sides")
    off = math.cos(math.pi / sides)
    out = []
    for t in range(sides):
        theta = math.pi * (2 * t + 1) / sides
        out.append((math.cos(theta), math.sin(theta), off))
    return out


@dataclass
class URow:
    """An LP row that may carry uncertain parameters.

    The row reads  coeffs . x + wterms . w  (rel)  rhs, with w the uncertain
    parameter vector.  Certain rows leave `wterms` empty; a nominal resolution
    folds nominal parameter values into the rhs, and a box robustification
    replaces them with their worst case over the box.
    """

    coeffs: dict[int, float]
    rel: Rel
    rhs: float
    tag: str = ""
    wterms: dict[ParamKey, float] = field(default_factory=dict)


@dataclass
class BoundSpec:
    var: int
    lower: float
    upper: float
    tag: str


@dataclass
class ConstraintBlock:
    """Row and bound indices grouped by the tag that emitted them."""

    rows_by_tag: dict[str, list[int]] = field(default_factory=dict)
    bounds_by_tag: dict[str, list[int]] = field(default_factory=dict)

    def add_row(self, tag: str, idx: int) -> None:
        self.rows_by_tag.setdefault(tag, []).append(idx)

    def add_bound(self, tag: str, var: int) -> None:
        self.bounds_by_tag.setdefault(tag, []).append(var)

    def row_count(self, tag: str) -> int:
        return len(self.rows_by_tag.get(tag, []))


class VariableNamespace:
    """Index maps from model entities to LP variables, in documented order."""

    def __init__(self) -> None:
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.w: dict[tuple[str, str, int], int] = {}
        self.pflow: dict[tuple[str, str, int], int] = {}
        self.qflow: dict[tuple[str, str, int], int] = {}
        self.ppv: dict[tuple[str, int], int] = {}
        self.qpv: dict[tuple[str, int], int] = {}
        self.pdg: dict[tuple[str, int], int] = {}
        self.qdg: dict[tuple[str, int], int] = {}
        self.pes: dict[tuple[str, int], int] = {}
        self.qes: dict[tuple[str, int], int] = {}
        self.pload: dict[tuple[str, int], int] = {}
        self.qload: dict[tuple[str, int], int] = {}
        self.soc: dict[tuple[str, int], int] = {}  # stored energy at END of step k
        self.r_up: dict[tuple[str, str, int], int] = {}  # (class, id, k)
        self.r_dn: dict[tuple[str, str, int], int] = {}
        self.dg_loss: dict[tuple[str, int], int] = {}

    @property
    def n_variables(self) -> int:
        return len(self.names)

    def _new(self, name: str, lower=-math.inf, upper=math.inf) -> int:
        idx = len(self.names)
        self.names.append(name)
        self.lower.append(lower)
        self.upper.append(upper)
        return idx

    def make_lp(self) -> LinearProgram:
        lp = LinearProgram()
        for name, lo, hi in zip(self.names, self.lower, self.upper):
            lp.add_variable(name, lo, hi)
        return lp


def build_namespace(
    model: NetworkModel,
    reserves: bool = False,
    dg_loss_keys: tuple[tuple[str, int], ...] = (),
) -> VariableNamespace:
    """Declare every LP variable for `model` in deterministic order.

    With `reserves`, the four up/down reserve classes are added per device and
    step; `dg_loss_keys` adds the worst-case output-loss helpers used by the
    robust coverage rows.
    """
    ns = VariableNamespace()
    K = model.steps

    for bus in sorted(model.buses, key=lambda b: b.id):
        for phase in bus.phases:
            for k in range(K):
                ns.w[(bus.id, phase, k)] = ns._new(f"w[{bus.id},{phase},{k}]")
    for br in sorted(model.branches, key=lambda b: b.id):
        for phase in br.phases:
            for k in range(K):
                ns.pflow[(br.id, phase, k)] = ns._new(f"pflow[{br.id},{phase},{k}]")
    for br in sorted(model.branches, key=lambda b: b.id):
        for phase in br.phases:
            for k in range(K):
                ns.qflow[(br.id, phase, k)] = ns._new(f"qflow[{br.id},{phase},{k}]")

    def device_block(units, pmap, qmap, label):
        for u in sorted(units, key=lambda d: d.id):
            for k in range(K):
                pmap[(u.id, k)] = ns._new(f"p{label}[{u.id},{k}]")
        for u in sorted(units, key=lambda d: d.id):
            for k in range(K):
                qmap[(u.id, k)] = ns._new(f"q{label}[{u.id},{k}]")

    device_block(model.pv_units, ns.ppv, ns.qpv, "pv")
    device_block(model.dg_units, ns.pdg, ns.qdg, "dg")
    device_block(model.storage_units, ns.pes, ns.qes, "es")
    device_block(model.loads, ns.pload, ns.qload, "load")

    for es in sorted(model.storage_units, key=lambda d: d.id):
        for k in range(K):
            ns.soc[(es.id, k)] = ns._new(f"soc[{es.id},{k}]")

    if reserves:
        groups = (
            ("pv", model.pv_units),
            ("dg", model.dg_units),
            ("es", model.storage_units),
            ("load", model.loads),
        )
        for cls, units in groups:
            for u in sorted(units, key=lambda d: d.id):
                for k in range(K):
                    ns.r_up[(cls, u.id, k)] = ns._new(f"rup_{cls}[{u.id},{k}]", 0.0)
        for cls, units in groups:
            for u in sorted(units, key=lambda d: d.id):
                for k in range(K):
                    ns.r_dn[(cls, u.id, k)] = ns._new(f"rdn_{cls}[{u.id},{k}]", 0.0)
    for uid, k in sorted(dg_loss_keys):
        ns.dg_loss[(uid, k)] = ns._new(f"dgloss[{uid},{k}]", 0.0)

    return ns


def device_share(model: NetworkModel, bus_id: str) -> tuple[str, float]:
    """Phases a device at `bus_id` spans and its per-phase injection share."""
    phases = model.bus(bus_id).phases
    return phases, 1.0 / len(phases)


def emit_voltage_drop(model: NetworkModel, ns: VariableNamespace) -> list[URow]:
    """One equality per branch-phase-step: w_to = w_from - 2(r_eff P + x_eff Q)."""
    pu = PerUnit.of(model)
    rows = []
    for br in model.branches:
        for phase in br.phases:
            z = effective_impedance_pu(br, phase, pu)
            for k in range(model.steps):
                rows.append(
                    URow(
                        {
                            ns.w[(br.to_bus, phase, k)]: 1.0,
                            ns.w[(br.from_bus, phase, k)]: -1.0,
                            ns.pflow[(br.id, phase, k)]: 2.0 * z.real,
                            ns.qflow[(br.id, phase, k)]: 2.0 * z.imag,
                        },
                        Rel.EQ,
                        0.0,
                        "voltage_drop",
                    )
                )
    return rows


def emit_power_balance(model: NetworkModel, ns: VariableNamespace) -> list[URow]:
    """Two equalities (P and Q) per bus-phase-step.

    Inflow - outflow + generation - load = 0; the injection belongs to the
    downstream bus of its feeding branch.  Summed over the feeder these rows
    telescope to total generation = total load (the lossless-model identity).
    """
    parent = model.parent_branch()
    children = model.children()
    rows = []
    for bus in model.buses:
        share = 1.0 / len(bus.phases)
        at_bus = {
            "pv": [u for u in model.pv_units if u.bus == bus.id],
            "dg": [u for u in model.dg_units if u.bus == bus.id],
            "es": [u for u in model.storage_units if u.bus == bus.id],
            "load": [u for u in model.loads if u.bus == bus.id],
        }
        for phase in bus.phases:
            for k in range(model.steps):
                pco: dict[int, float] = {}
                qco: dict[int, float] = {}
                up = parent.get(bus.id)
                if up is not None and phase in up.phases:
                    pco[ns.pflow[(up.id, phase, k)]] = 1.0
                    qco[ns.qflow[(up.id, phase, k)]] = 1.0
                for child in children[bus.id]:
                    br = parent[child]
                    if phase in br.phases:
                        pco[ns.pflow[(br.id, phase, k)]] = -1.0
                        qco[ns.qflow[(br.id, phase, k)]] = -1.0
                for u in at_bus["pv"]:
                    pco[ns.ppv[(u.id, k)]] = share
                    qco[ns.qpv[(u.id, k)]] = share
                for u in at_bus["dg"]:
                    pco[ns.pdg[(u.id, k)]] = share
                    qco[ns.qdg[(u.id, k)]] = share
                for u in at_bus["es"]:
                    pco[ns.pes[(u.id, k)]] = share
                    qco[ns.qes[(u.id, k)]] = share
                for u in at_bus["load"]:
                    pco[ns.pload[(u.id, k)]] = -share
                    qco[ns.qload[(u.id, k)]] = -share
                rows.append(URow(pco, Rel.EQ, 0.0, "power_balance"))
                rows.append(URow(qco, Rel.EQ, 0.0, "power_balance"))
    return rows


@dataclass
class BuildOptions:
    poly_sides: int = 8
    pv_power_factor_gamma: float | None = None
    terminal_soc_geq_initial: bool = False


@dataclass
class Emission:
    rows: list[URow] = field(default_factory=list)
    bounds: list[BoundSpec] = field(default_factory=list)


def emit_limits(
    model: NetworkModel,
    ns: VariableNamespace,
    options: BuildOptions,
    reserves: bool = False,
    uncertain_pv: frozenset[tuple[str, int]] = frozenset(),
) -> Emission:
    """Voltage boxes, polygonized apparent-power limits, SoC dynamics, and
    dispatch windows.

    In reserve mode the PV/DG/storage/load windows widen into the reserve-band
    rows; a PV upper band whose (unit, step) appears in `uncertain_pv` carries
    its forecast as an uncertain term so the robust pass can tighten it.
    """
    pu = PerUnit.of(model)
    K = model.steps
    dt = model.dt_hours
    em = Emission()
    poly = polygon_rows(options.poly_sides)

    # voltage boxes; the root is the fixed reference at 1 pu
    root = model.root.id
    for (bus_id, phase, k), var in ns.w.items():
        if bus_id == root:
            em.bounds.append(BoundSpec(var, 1.0, 1.0, "voltage_limits"))
        else:
            bus = model.bus(bus_id)
            em.bounds.append(BoundSpec(var, bus.v_min**2, bus.v_max**2, "voltage_limits"))

    # line-flow polygons
    for br in model.branches:
        s_max = pu.power(br.flow_limit_va)
        for phase in br.phases:
            for k in range(K):
                for cs, sn, off in poly:
                    em.rows.append(
                        URow(
                            {ns.pflow[(br.id, phase, k)]: cs, ns.qflow[(br.id, phase, k)]: sn},
                            Rel.LE,
                            s_max * off,
                            "line_limits",
                        )
                    )

    # PV: dispatch window plus inverter polygon
    for pv in model.pv_units:
        cap = pu.power(pv.capacity_va)
        for k in range(K):
            p = ns.ppv[(pv.id, k)]
            q = ns.qpv[(pv.id, k)]
            forecast = pu.power(float(pv.forecast_w[k]))
            em.bounds.append(BoundSpec(p, 0.0, forecast, "curtailment_bounds"))
            if reserves:
                # p + R+ <= forecast(w); R- <= p
                if (pv.id, k) in uncertain_pv:
                    em.rows.append(
                        URow(
                            {p: 1.0, ns.r_up[("pv", pv.id, k)]: 1.0},
                            Rel.LE,
                            0.0,
                            "curtailment_bounds",
                            wterms={(P_PV_FORECAST, pv.id, k): -1.0},
                        )
                    )
                else:
                    em.rows.append(
                        URow(
                            {p: 1.0, ns.r_up[("pv", pv.id, k)]: 1.0},
                            Rel.LE,
                            forecast,
                            "curtailment_bounds",
                        )
                    )
                em.rows.append(
                    URow(
                        {ns.r_dn[("pv", pv.id, k)]: 1.0, p: -1.0},
                        Rel.LE,
                        0.0,
                        "curtailment_bounds",
                    )
                )
            for cs, sn, off in poly:
                em.rows.append(URow({p: cs, q: sn}, Rel.LE, cap * off, "pv_cap"))
            if options.pv_power_factor_gamma is not None:
                g = options.pv_power_factor_gamma
                em.rows.append(URow({q: 1.0, p: -g}, Rel.LE, 0.0, "power_factor"))
                em.rows.append(URow({q: -1.0, p: -g}, Rel.LE, 0.0, "power_factor"))

    # DG: capacity window plus polygon
    for dg in model.dg_units:
        cap = pu.power(dg.capacity_va)
        for k in range(K):
            p = ns.pdg[(dg.id, k)]
            q = ns.qdg[(dg.id, k)]
            em.bounds.append(BoundSpec(p, 0.0, cap, "dg_cap"))
            if reserves:
                em.rows.append(
                    URow({p: 1.0, ns.r_up[("dg", dg.id, k)]: 1.0}, Rel.LE, cap, "dg_cap")
                )
                em.rows.append(
                    URow({ns.r_dn[("dg", dg.id, k)]: 1.0, p: -1.0}, Rel.LE, 0.0, "dg_cap")
                )
            for cs, sn, off in poly:
                em.rows.append(URow({p: cs, q: sn}, Rel.LE, cap * off, "dg_cap"))

    # storage: SoC recursion, energy/power windows, inverter polygon
    for es in model.storage_units:
        p_max = pu.power(es.power_w)
        e_min = pu.energy(es.energy_min_wh)
        e_max = pu.energy(es.energy_max_wh)
        e0 = pu.energy(es.initial_soc_wh)
        s_max = pu.power(es.capacity_va)
        for k in range(K):
            p = ns.pes[(es.id, k)]
            q = ns.qes[(es.id, k)]
            e = ns.soc[(es.id, k)]
            em.bounds.append(BoundSpec(p, -p_max, p_max, "storage"))
            em.bounds.append(BoundSpec(e, e_min, e_max, "storage"))
            coeffs = {e: 1.0, p: dt}
            rhs = 0.0
            if k == 0:
                rhs = e0
            else:
                coeffs[ns.soc[(es.id, k - 1)]] = -1.0
            em.rows.append(URow(coeffs, Rel.EQ, rhs, "storage"))
            if reserves:
                up = ns.r_up[("es", es.id, k)]
                dn = ns.r_dn[("es", es.id, k)]
                em.rows.append(URow({p: 1.0, up: 1.0}, Rel.LE, p_max, "storage"))
                em.rows.append(URow({p: -1.0, dn: 1.0}, Rel.LE, p_max, "storage"))
                em.rows.append(URow({e: 1.0, dn: dt}, Rel.LE, e_max, "storage"))
                em.rows.append(URow({e: -1.0, up: dt}, Rel.LE, -e_min, "storage"))
            for cs, sn, off in poly:
                em.rows.append(URow({p: cs, q: sn}, Rel.LE, s_max * off, "storage"))
        if options.terminal_soc_geq_initial:
            em.rows.append(
                URow({ns.soc[(es.id, K - 1)]: 1.0}, Rel.GE, e0, "storage")
            )

    # loads: service window between the critical minimum and the desired level,
    # with reactive power following through the fixed power factor
    for ld in model.loads:
        tan_phi = math.tan(math.acos(ld.power_factor))
        for k in range(K):
            p = ns.pload[(ld.id, k)]
            q = ns.qload[(ld.id, k)]
            lo = pu.power(float(ld.minimum_w[k]))
            hi = pu.power(float(ld.desired_w[k]))
            em.bounds.append(BoundSpec(p, lo, hi, "curtailment_bounds"))
            em.rows.append(URow({q: 1.0, p: -tan_phi}, Rel.EQ, 0.0, "power_factor"))
            if reserves:
                up = ns.r_up[("load", ld.id, k)]
                dn = ns.r_dn[("load", ld.id, k)]
                # reverse convention: up-reserve is room to shed toward the minimum
                em.rows.append(URow({p: -1.0, up: 1.0}, Rel.LE, -lo, "curtailment_bounds"))
                em.rows.append(URow({p: 1.0, dn: 1.0}, Rel.LE, hi, "curtailment_bounds"))
    return em


def nominal_params(model: NetworkModel) -> dict[ParamKey, float]:
    """Nominal pu value of every parameter that can be declared uncertain."""
    pu = PerUnit.of(model)
    out: dict[ParamKey, float] = {}
    for k in range(model.steps):
        for pv in model.pv_units:
            out[(P_PV_FORECAST, pv.id, k)] = pu.power(float(pv.forecast_w[k]))
        for dg in model.dg_units:
            out[(P_DG_CAPACITY, dg.id, k)] = pu.power(dg.capacity_va)
        for ld in model.loads:
            out[(P_LOAD_DESIRED, ld.id, k)] = pu.power(float(ld.desired_w[k]))
    return out


def resolve_nominal(rows: list[URow], nominal: dict[ParamKey, float]) -> list[URow]:
    """Fold nominal parameter values into the rhs of any uncertain rows
    (coeffs.x <= rhs - wterms.w_nom and likewise for the other relations)."""
    out = []
    for row in rows:
        if not row.wterms:
            out.append(row)
            continue
        rhs = row.rhs - sum(coeff * nominal[key] for key, coeff in row.wterms.items())
        out.append(URow(dict(row.coeffs), row.rel, rhs, row.tag))
    return out


def apply_emissions(
    lp: LinearProgram, block: ConstraintBlock, rows: list[URow], bounds: list[BoundSpec] = ()
) -> None:
    for row in rows:
        if row.wterms:
            raise ValueError("unresolved uncertain row; tighten or resolve it first")
        idx = lp.add_row(row.coeffs, row.rel, row.rhs, row.tag)
        block.add_row(row.tag, idx)
    for b in bounds:
        lp.set_bounds(b.var, b.lower, b.upper)
        block.add_bound(b.tag, b.var)


# ---------------------------------------------------------------------------
# direct linear power flow (used by the simulator; no optimization involved)


def solve_linear_flow(
    model: NetworkModel, injections_pu: dict[tuple[str, str], tuple[float, float]]
) -> tuple[dict[tuple[str, str], tuple[float, float]], dict[tuple[str, str], float]]:
    """Branch flows and squared voltages for fixed net injections.

    `injections_pu` maps (bus, phase) to net injected (P, Q) in pu
    (generation minus load).  Flows are signed parent->child; voltages follow
    the same linear drop equation as the LP rows, anchored at 1 pu^2 on the
    root.  Radial sweep, exact for the linear model.
    """
    pu = PerUnit.of(model)
    order, parent = model._bfs()
    children = model.children()
    bus_map = {b.id: b for b in model.buses}
    subtree: dict[tuple[str, str], tuple[float, float]] = {}
    for bus_id in reversed(order):
        bus = bus_map[bus_id]
        for phase in bus.phases:
            p, q = injections_pu.get((bus_id, phase), (0.0, 0.0))
            for child in children[bus_id]:
                if phase in bus_map[child].phases:
                    cp, cq = subtree[(child, phase)]
                    p += cp
                    q += cq
            subtree[(bus_id, phase)] = (p, q)

    flows: dict[tuple[str, str], tuple[float, float]] = {}
    for child, br in parent.items():
        for phase in br.phases:
            sp, sq = subtree.get((child, phase), (0.0, 0.0))
            flows[(br.id, phase)] = (-sp, -sq)  # power delivered into the subtree

    w: dict[tuple[str, str], float] = {}
    for phase in model.root.phases:
        w[(model.root.id, phase)] = 1.0
    for bus_id in order[1:]:
        br = parent[bus_id]
        up = br.from_bus if br.to_bus == bus_id else br.to_bus
        for phase in bus_map[bus_id].phases:
            z = effective_impedance_pu(br, phase, pu)
            fp, fq = flows[(br.id, phase)]
            w[(bus_id, phase)] = w[(up, phase)] - 2.0 * (z.real * fp + z.imag * fq)
    return flows, w
