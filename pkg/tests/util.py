"""Hand-built miniature feeders shared across the test suite."""

import numpy as np

from gridres.network import (
    BaseQuantities,
    Branch,
    Bus,
    DgUnit,
    LoadPoint,
    NetworkModel,
    PvUnit,
    StorageUnit,
)

Z_BASE = 4160.0**2 / (3.0 * 1.0e6)  # ohm, at the default bases


def single_bus(load_des_w=1.0e6, load_min_w=None, dg_cap_va=2.0e6, steps=1,
               with_pv=False, with_storage=False, pf=1.0):
    """One bus hosting a DG and a load; optionally PV and storage.

    Unity power factor by default so hand-derived P-only arithmetic is exact.
    """
    if load_min_w is None:
        load_min_w = load_des_w
    des = np.full(steps, float(load_des_w))
    mn = np.full(steps, float(load_min_w))
    pvs = []
    if with_pv:
        pvs = [PvUnit("pv1", "bus0", 1.0e6, np.full(steps, 0.5e6))]
    ess = []
    if with_storage:
        ess = [StorageUnit("es1", "bus0", 0.5e6, 0.2e6, 2.0e6, 0.6e6, 1.0e6)]
    return NetworkModel(
        buses=[Bus("bus0", "a")],
        branches=[],
        pv_units=pvs,
        dg_units=[DgUnit("dg1", "bus0", float(dg_cap_va))] if dg_cap_va else [],
        storage_units=ess,
        loads=[LoadPoint("load1", "bus0", des, mn, pf)],
        steps=steps,
        dt_hours=0.25,
    )


def two_bus(z_pu=0.01 + 0.02j, steps=1, load_des_w=1.0e6, pv_cap_va=2.0e6,
            forecast_w=None, load=True):
    """Root feeding one child bus holding a PV unit and (optionally) a load."""
    if forecast_w is None:
        forecast_w = np.full(steps, 1.5e6)
    loads = []
    if load:
        des = np.full(steps, float(load_des_w))
        loads = [LoadPoint("load1", "bus1", des, 0.5 * des, 0.95)]
    return NetworkModel(
        buses=[Bus("bus0", "a"), Bus("bus1", "a")],
        branches=[Branch("bus0", "bus1", "a", {"aa": z_pu * Z_BASE}, 5.0e6)],
        pv_units=[PvUnit("pv1", "bus1", float(pv_cap_va), np.asarray(forecast_w, dtype=float))],
        dg_units=[DgUnit("dg1", "bus0", 2.0e6)],
        storage_units=[],
        loads=loads,
        steps=steps,
        dt_hours=0.25,
    )


def six_bus(steps=4):
    """Three-phase trunk with one single-phase lateral per phase.

    Generation sits on the trunk (balanced injection), one equal load hangs
    off each phase, so per-phase supply matches per-phase demand and the
    feeder serves everything with room to spare.
    """
    buses = [
        Bus("bus0", "abc"),
        Bus("bus1", "abc"),
        Bus("bus2", "a"),
        Bus("bus3", "b"),
        Bus("bus4", "c"),
        Bus("bus5", "a"),
    ]
    z3 = {p + p: (0.002 + 0.004j) * Z_BASE for p in "abc"}
    branches = [
        Branch("bus0", "bus1", "abc", z3, 2.0e6),
        Branch("bus1", "bus2", "a", {"aa": (0.003 + 0.006j) * Z_BASE}, 1.0e6),
        Branch("bus1", "bus3", "b", {"bb": (0.003 + 0.006j) * Z_BASE}, 1.0e6),
        Branch("bus1", "bus4", "c", {"cc": (0.003 + 0.006j) * Z_BASE}, 1.0e6),
        Branch("bus2", "bus5", "a", {"aa": (0.004 + 0.008j) * Z_BASE}, 1.0e6),
    ]
    shape = np.linspace(1.0, 0.9, steps)
    loads = [
        LoadPoint("load1", "bus2", 0.3e6 * shape, 0.15e6 * shape, 0.95),
        LoadPoint("load2", "bus3", 0.3e6 * shape, 0.15e6 * shape, 0.95),
        LoadPoint("load3", "bus4", 0.3e6 * shape, 0.15e6 * shape, 0.95),
    ]
    pv_shape = np.linspace(0.3, 0.8, steps)
    return NetworkModel(
        buses=buses,
        branches=branches,
        pv_units=[PvUnit("pv1", "bus1", 0.6e6, 0.6e6 * pv_shape)],
        dg_units=[DgUnit("dg1", "bus0", 1.5e6)],
        storage_units=[StorageUnit("es1", "bus1", 0.4e6, 0.1e6, 1.0e6, 0.5e6, 0.5e6)],
        loads=loads,
        steps=steps,
        dt_hours=0.25,
        base=BaseQuantities(),
    )
