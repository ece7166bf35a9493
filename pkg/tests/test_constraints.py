import math

import numpy as np
import pytest

from gridres.constraints import (
    BuildOptions,
    PerUnit,
    build_namespace,
    effective_impedance_pu,
    emit_limits,
    emit_power_balance,
    emit_voltage_drop,
    polygon_rows,
    solve_linear_flow,
)
from gridres.dispatch import CostConfig, solve_baseline
from gridres.lp import Rel
from gridres.network import Branch, Bus, NetworkModel, SynthSpec, synth_feeder
from util import Z_BASE, six_bus, two_bus


def test_namespace_count_two_bus():
    # by hand: w per bus-phase-step + P/Q flow per branch-phase-step
    #          + P/Q per device-step + P/Q per load-step
    model = two_bus(steps=1, load=False)
    ns = build_namespace(model)
    assert len(ns.w) == 2
    assert len(ns.pflow) == len(ns.qflow) == 1
    assert len(ns.ppv) == len(ns.qpv) == 1
    assert len(ns.pdg) == len(ns.qdg) == 1
    assert ns.n_variables == 2 + 2 + 2 + 2


def test_namespace_time_scaling():
    a = build_namespace(two_bus(steps=1))
    b = build_namespace(two_bus(steps=3))
    assert b.n_variables == 3 * a.n_variables


def test_namespace_empty_devices():
    model = two_bus(steps=2, load=False)
    model.pv_units = []
    model.dg_units = []
    ns = build_namespace(model)
    assert ns.n_variables == len(ns.w) + len(ns.pflow) + len(ns.qflow)


def test_namespace_deterministic_ordering():
    model = six_bus()
    a = build_namespace(model)
    b = build_namespace(model)
    assert a.names == b.names
    assert a.names[0].startswith("w[")


def test_voltage_drop_direct_substitution():
    """z = 0.01+0.02j pu, P = 1, Q = 0.5 pu at w_from = 1 gives w_to = 0.96."""
    model = two_bus(z_pu=0.01 + 0.02j, load=False)
    ns = build_namespace(model)
    rows = emit_voltage_drop(model, ns)
    assert len(rows) == 1
    row = rows[0]
    # w_to - w_from + 2r P + 2x Q = 0  =>  w_to = 1 - 2(0.01*1 + 0.02*0.5) = 0.96
    point = {
        ns.w[("bus0", "a", 0)]: 1.0,
        ns.pflow[("bus0->bus1", "a", 0)]: 1.0,
        ns.qflow[("bus0->bus1", "a", 0)]: 0.5,
    }
    residual = sum(coeff * point.get(idx, 0.0) for idx, coeff in row.coeffs.items())
    w_to_coeff = row.coeffs[ns.w[("bus1", "a", 0)]]
    assert w_to_coeff == 1.0
    w_to = -(residual - 0.0)  # solve the row for w_to
    assert w_to == pytest.approx(0.96, abs=1e-12)


def test_voltage_drop_zero_impedance_is_identity():
    model = two_bus(z_pu=0.0 + 0.0j, load=False)
    ns = build_namespace(model)
    row = emit_voltage_drop(model, ns)[0]
    assert row.coeffs.get(ns.pflow[("bus0->bus1", "a", 0)], 0.0) == 0.0
    assert row.coeffs.get(ns.qflow[("bus0->bus1", "a", 0)], 0.0) == 0.0


def test_three_phase_balanced_rows_identical():
    """Equal diagonal impedance, no mutuals: the per-phase rows coincide."""
    z = (0.004 + 0.009j) * Z_BASE
    model = NetworkModel(
        buses=[Bus("bus0", "abc"), Bus("bus1", "abc")],
        branches=[Branch("bus0", "bus1", "abc", {"aa": z, "bb": z, "cc": z}, 2e6)],
        pv_units=[], dg_units=[], storage_units=[], loads=[],
        steps=1, dt_hours=0.25,
    )
    pu = PerUnit.of(model)
    zs = [effective_impedance_pu(model.branches[0], p, pu) for p in "abc"]
    assert zs[0] == pytest.approx(zs[1]) == pytest.approx(zs[2])
    assert zs[0] == pytest.approx(0.004 + 0.009j)


def test_rotation_mixes_mutual_impedance():
    z_self = (0.004 + 0.009j) * Z_BASE
    z_mut = (0.001 + 0.003j) * Z_BASE
    branch = Branch(
        "bus0", "bus1", "abc",
        {"aa": z_self, "bb": z_self, "cc": z_self, "ab": z_mut, "ac": z_mut, "bc": z_mut},
        2e6,
    )
    model = NetworkModel(
        buses=[Bus("bus0", "abc"), Bus("bus1", "abc")], branches=[branch],
        pv_units=[], dg_units=[], storage_units=[], loads=[], steps=1, dt_hours=0.25,
    )
    pu = PerUnit.of(model)
    za = effective_impedance_pu(branch, "a", pu)
    # a-phase picks up the two mutuals rotated by +-120 degrees; with equal
    # mutual impedance their sum is -z_mut
    expected = (z_self - z_mut) / pu.z_base
    assert za == pytest.approx(expected)


def test_power_balance_leaf_and_junction():
    model = six_bus(steps=1)
    ns = build_namespace(model)
    rows = emit_power_balance(model, ns)
    # 2 rows (P, Q) per bus-phase-step
    n_bus_phase = sum(len(b.phases) for b in model.buses)
    assert len(rows) == 2 * n_bus_phase

    # leaf bus3 hosts load2 on phase b: inflow + (-load share) = 0
    leaf_p = next(
        r for r in rows
        if ns.pflow.get(("bus1->bus3", "b", 0)) in r.coeffs
        and ns.pload.get(("load2", 0)) in r.coeffs
    )
    assert leaf_p.coeffs[ns.pflow[("bus1->bus3", "b", 0)]] == 1.0
    assert leaf_p.coeffs[ns.pload[("load2", 0)]] == -1.0

    # junction bus1 on phase a: inflow from trunk, outflow to bus2 lateral
    junction = next(
        r for r in rows
        if r.coeffs.get(ns.pflow.get(("bus0->bus1", "a", 0))) == 1.0
        and r.coeffs.get(ns.pflow.get(("bus1->bus2", "a", 0))) == -1.0
    )
    assert junction is not None


def test_balance_rows_telescope_to_lossless_identity():
    """Summing all P rows leaves only generation - load (flows cancel)."""
    model = six_bus(steps=2)
    ns = build_namespace(model)
    rows = emit_power_balance(model, ns)
    k = 1
    total = {}
    for row in rows:
        touches_k = any(
            idx in row.coeffs for idx in (
                list(ns.pflow.get((br.id, p, k), -1) for br in model.branches for p in br.phases)
            )
        )
        for idx, coeff in row.coeffs.items():
            total[idx] = total.get(idx, 0.0) + coeff
    # every flow variable cancels out
    for key, idx in ns.pflow.items():
        assert total.get(idx, 0.0) == pytest.approx(0.0, abs=1e-12)
    for key, idx in ns.qflow.items():
        assert total.get(idx, 0.0) == pytest.approx(0.0, abs=1e-12)
    # device shares sum back to one per device-step
    for (uid, kk), idx in ns.pdg.items():
        assert total.get(idx) == pytest.approx(1.0)
    for (uid, kk), idx in ns.pload.items():
        assert total.get(idx) == pytest.approx(-1.0)


def test_polygon_vertex_feasible_with_two_adjacent_equalities():
    """Derived polygon oracle: vertices sit at angles 2*pi*t/sides, radius S."""
    sides = 8
    rows = polygon_rows(sides)
    s = 1.0
    vertex = (s * math.cos(0.0), s * math.sin(0.0))  # angle 0 vertex
    residuals = [cs * vertex[0] + sn * vertex[1] - s * off for cs, sn, off in rows]
    tight = [i for i, r in enumerate(residuals) if abs(r) < 1e-12]
    assert all(r <= 1e-12 for r in residuals)
    assert tight == [0, sides - 1]  # two adjacent rows (normals at +-pi/8)


def test_polygon_is_inscribed():
    """Dense sampling: every point satisfying the rows lies inside the circle."""
    rng = np.random.default_rng(6)
    rows = polygon_rows(8)
    pts = rng.uniform(-1.5, 1.5, size=(4000, 2))
    inside_rows = np.ones(len(pts), dtype=bool)
    for cs, sn, off in rows:
        inside_rows &= pts[:, 0] * cs + pts[:, 1] * sn <= off + 1e-12
    norms = np.hypot(pts[:, 0], pts[:, 1])
    assert inside_rows.any()
    assert (norms[inside_rows] <= 1.0 + 1e-9).all()
    # and it is a tight fit: some admitted point reaches past the apothem
    assert norms[inside_rows].max() > math.cos(math.pi / 8)


def test_soc_recursion_arithmetic():
    """E_next = E - P*dt: 3 MWh at 1.5 MW for 0.25 h leaves 2.625 MWh."""
    model = two_bus(steps=2)
    model.storage_units = [
        __import__("gridres.network", fromlist=["StorageUnit"]).StorageUnit(
            "es1", "bus1", 2.0e6, 0.5e6, 5.0e6, 2.5e6, 3.0e6
        )
    ]
    ns = build_namespace(model)
    em = emit_limits(model, ns, BuildOptions())
    rec = [r for r in em.rows if r.tag == "storage" and r.rel is Rel.EQ]
    assert len(rec) == 2
    first = rec[0]
    # soc[0] + dt * pes[0] = E0  ->  with pes = 1.5 pu, soc[0] = 3.0 - 0.375
    point = {ns.pes[("es1", 0)]: 1.5}
    lhs_coeff = first.coeffs[ns.soc[("es1", 0)]]
    assert lhs_coeff == 1.0
    soc0 = first.rhs - first.coeffs[ns.pes[("es1", 0)]] * point[ns.pes[("es1", 0)]]
    assert soc0 == pytest.approx(3.0 - 1.5 * 0.25)


def test_night_pv_forced_to_zero():
    model = two_bus(steps=1, forecast_w=np.array([0.0]))
    ns = build_namespace(model)
    em = emit_limits(model, ns, BuildOptions())
    b = next(b for b in em.bounds if b.var == ns.ppv[("pv1", 0)])
    assert b.lower == 0.0 and b.upper == 0.0


def test_row_count_formulas_fuzz():
    rng = np.random.default_rng(17)
    for _ in range(8):
        spec = SynthSpec(
            buses=int(rng.integers(4, 9)),
            seed=int(rng.integers(0, 1000)),
            steps=int(rng.integers(2, 6)),
            n_loads=int(rng.integers(2, 4)),
            n_pv=int(rng.integers(1, 3)),
            n_dg=int(rng.integers(1, 3)),
            n_storage=int(rng.integers(1, 3)),
            balanced_phases=False,  # row counting is agnostic to balance
        )
        model = synth_feeder(spec)
        ns = build_namespace(model)
        K = model.steps
        sides = 8
        bus_phases = sum(len(b.phases) for b in model.buses)
        branch_phases = sum(len(br.phases) for br in model.branches)

        vd = emit_voltage_drop(model, ns)
        assert len(vd) == branch_phases * K
        pb = emit_power_balance(model, ns)
        assert len(pb) == 2 * bus_phases * K
        em = emit_limits(model, ns, BuildOptions(poly_sides=sides))
        by_tag = {}
        for r in em.rows:
            by_tag[r.tag] = by_tag.get(r.tag, 0) + 1
        n_pv, n_dg, n_es, n_load = (
            len(model.pv_units), len(model.dg_units),
            len(model.storage_units), len(model.loads),
        )
        assert by_tag["line_limits"] == branch_phases * K * sides
        assert by_tag["pv_cap"] == n_pv * K * sides
        assert by_tag["dg_cap"] == n_dg * K * sides
        assert by_tag["storage"] == n_es * K * sides + n_es * K
        assert by_tag["power_factor"] == n_load * K
        bound_tags = {}
        for b in em.bounds:
            bound_tags[b.tag] = bound_tags.get(b.tag, 0) + 1
        assert bound_tags["voltage_limits"] == bus_phases * K
        assert bound_tags["curtailment_bounds"] == (n_pv + n_load) * K


def test_voltage_monotone_on_consuming_feeder():
    """Positive flow toward a net-consuming child bus lowers its voltage."""
    model = two_bus(z_pu=0.01 + 0.02j, load_des_w=1.0e6, forecast_w=np.array([0.0]))
    result = solve_baseline(model, CostConfig())
    w0 = result.voltage_sq_pu[("bus0", "a")][0]
    w1 = result.voltage_sq_pu[("bus1", "a")][0]
    assert w0 == pytest.approx(1.0)
    assert w1 < w0


def test_linear_flow_matches_lp_voltages():
    model = six_bus(steps=2)
    result = solve_baseline(model, CostConfig())
    pu = PerUnit.of(model)
    k = 1
    injections = {}
    for bus in model.buses:
        share = 1.0 / len(bus.phases)
        for phase in bus.phases:
            p = q = 0.0
            for u in model.pv_units:
                if u.bus == bus.id:
                    p += share * pu.power(result.pv_p[u.id][k])
                    q += share * pu.power(result.pv_q[u.id][k])
            for u in model.dg_units:
                if u.bus == bus.id:
                    p += share * pu.power(result.dg_p[u.id][k])
                    q += share * pu.power(result.dg_q[u.id][k])
            for u in model.storage_units:
                if u.bus == bus.id:
                    p += share * pu.power(result.es_p[u.id][k])
                    q += share * pu.power(result.es_q[u.id][k])
            for u in model.loads:
                if u.bus == bus.id:
                    p -= share * pu.power(result.load_p[u.id][k])
                    q -= share * pu.power(result.load_q[u.id][k])
            injections[(bus.id, phase)] = (p, q)
    flows, w = solve_linear_flow(model, injections)
    for key, arr in result.voltage_sq_pu.items():
        assert w[key] == pytest.approx(arr[k], abs=5e-7)


def test_optional_pv_power_factor_rows():
    """With a gamma set, PV reactive output is fenced to |Q| <= gamma * P."""
    model = two_bus(steps=2)
    ns = build_namespace(model)
    em = emit_limits(model, ns, BuildOptions(pv_power_factor_gamma=0.4))
    pf_rows = [r for r in em.rows if r.tag == "power_factor" and r.rel is Rel.LE]
    assert len(pf_rows) == 2 * 1 * 2  # two rows per pv unit and step

    from gridres.dispatch import CostConfig, solve_baseline

    result = solve_baseline(model, CostConfig(), BuildOptions(pv_power_factor_gamma=0.4))
    for k in range(model.steps):
        p = result.pv_p["pv1"][k]
        q = result.pv_q["pv1"][k]
        assert abs(q) <= 0.4 * p + 1e-1


def test_mutually_coupled_trunk_solves_end_to_end():
    """Off-diagonal trunk impedance flows through the rotation into a solvable
    model with physically sensible (slightly asymmetric) voltages."""
    model = six_bus(steps=2)
    trunk = model.branches[0]
    z_mut = (0.0005 + 0.0015j) * Z_BASE
    for pair in ("ab", "ac", "bc"):
        trunk.impedance_ohm[pair] = z_mut
    from gridres.dispatch import CostConfig, solve_baseline

    result = solve_baseline(model, CostConfig())
    for (bus, phase), series in result.voltage_sq_pu.items():
        assert (series >= 0.95**2 - 1e-9).all()
        assert (series <= 1.05**2 + 1e-9).all()
    # equal mutuals subtract from the self term, so drops shrink vs uncoupled
    pu = PerUnit.of(model)
    z_eff = effective_impedance_pu(trunk, "a", pu)
    assert z_eff.real < (trunk.z("a", "a") / pu.z_base).real
