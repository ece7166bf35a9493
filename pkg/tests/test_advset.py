import numpy as np
import pytest

from gridres.advset import (
    AdversarialAxis,
    AXIS_DG_LOSS,
    AXIS_LOAD_INCREASE,
    AXIS_PV_ERROR,
    AxisInfeasible,
    InnerPolytope,
    characterize,
    characterize_steps,
    contains,
    event_is_tolerable,
    project_2d,
    sample,
)
from gridres.dispatch import CostConfig, solve_baseline
from gridres.robust import ReserveSchedule
from util import single_bus, six_bus, two_bus

COSTS = CostConfig(1.0, 0.1, 10.0)


def dg_toy(load=2.0e6, cap=2.5e6, reserve=0.5e6):
    model = single_bus(load_des_w=load, load_min_w=0.5e6, dg_cap_va=cap)
    dispatch = solve_baseline(model, COSTS)
    reserves = ReserveSchedule.zero(model)
    reserves.up[("dg", "dg1")][:] = reserve
    return model, dispatch, reserves


def test_zero_reserves_zero_alpha():
    model = single_bus(load_des_w=1.0e6, load_min_w=1.0e6, dg_cap_va=1.0e6)
    dispatch = solve_baseline(model, COSTS)
    reserves = ReserveSchedule.zero(model)
    poly = characterize(model, dispatch, reserves,
                        [AdversarialAxis(AXIS_LOAD_INCREASE, "load1")], step=0)
    assert poly.alpha_w[0] == pytest.approx(0.0, abs=1.0)


def test_dg_headroom_bounds_load_axis():
    """2.0 MW dispatched of 2.5 MW with 0.5 MW held back: alpha* = 0.5 MW."""
    model, dispatch, reserves = dg_toy()
    poly = characterize(model, dispatch, reserves,
                        [AdversarialAxis(AXIS_LOAD_INCREASE, "load1")], step=0)
    assert poly.alpha_w[0] == pytest.approx(0.5e6, rel=1e-6)


def test_outer_cap_clamps_alpha():
    model, dispatch, reserves = dg_toy()
    poly = characterize(model, dispatch, reserves,
                        [AdversarialAxis(AXIS_LOAD_INCREASE, "load1", cap_w=0.3e6)],
                        step=0)
    assert poly.alpha_w[0] == pytest.approx(0.3e6, rel=1e-9)


def test_shed_reserve_extends_load_axis():
    # tolerable increase = generation headroom plus whatever can be shed
    model, dispatch, reserves = dg_toy()
    reserves.up[("load", "load1")][:] = 0.8e6
    poly = characterize(model, dispatch, reserves,
                        [AdversarialAxis(AXIS_LOAD_INCREASE, "load1")], step=0)
    assert poly.alpha_w[0] == pytest.approx(0.5e6 + 0.8e6, rel=1e-6)


def test_membership_basics():
    model, dispatch, reserves = dg_toy()
    axes = [
        AdversarialAxis(AXIS_LOAD_INCREASE, "load1"),
        AdversarialAxis(AXIS_DG_LOSS, "dg1"),
    ]
    poly = characterize(model, dispatch, reserves, axes, step=0)
    m = len(axes)
    assert contains(poly, np.zeros(m))  # the nominal point
    assert contains(poly, poly.vertices_w[1])  # an extreme point
    beyond = poly.vertices_w[1].copy()
    beyond[0] += 1e4
    assert not contains(poly, beyond)
    inside = 0.4 * poly.vertices_w[1] + 0.3 * poly.vertices_w[2]
    assert contains(poly, inside)


def test_sampling_is_deterministic_and_inside():
    model, dispatch, reserves = dg_toy()
    axes = [
        AdversarialAxis(AXIS_LOAD_INCREASE, "load1"),
        AdversarialAxis(AXIS_DG_LOSS, "dg1"),
    ]
    poly = characterize(model, dispatch, reserves, axes, step=0)
    a = sample(poly, seed=11, count=40)
    b = sample(poly, seed=11, count=40)
    np.testing.assert_array_equal(a, b)
    assert sample(poly, seed=12, count=40).sum() != a.sum()
    for point in a:
        assert contains(poly, point, tol=1e-7)


def test_vertices_and_samples_are_tolerable():
    """The defining property: every vertex and every convex sample admits a
    feasible recourse point (the convexity argument, checked literally)."""
    model = six_bus()
    dispatch = solve_baseline(model, COSTS)
    reserves = ReserveSchedule.from_headroom(model, dispatch)
    axes = [
        AdversarialAxis(AXIS_DG_LOSS, "dg1"),
        AdversarialAxis(AXIS_LOAD_INCREASE, "load1", cap_w=0.5e6),
        AdversarialAxis(AXIS_PV_ERROR, "pv1"),
    ]
    step = 2
    poly = characterize(model, dispatch, reserves, axes, step=step)
    assert (poly.alpha_w >= -1e-9).all()
    for vert in poly.vertices_w:
        assert event_is_tolerable(model, dispatch, reserves, step, axes, vert)
    for point in sample(poly, seed=3, count=60):
        assert event_is_tolerable(model, dispatch, reserves, step, axes, point)


def test_maximality_certificate():
    """alpha* + 1e-3 MW along any axis is infeasible."""
    model = six_bus()
    dispatch = solve_baseline(model, COSTS)
    reserves = ReserveSchedule.from_headroom(model, dispatch)
    axes = [
        AdversarialAxis(AXIS_DG_LOSS, "dg1"),
        AdversarialAxis(AXIS_LOAD_INCREASE, "load1", cap_w=0.5e6),
    ]
    step = 1
    poly = characterize(model, dispatch, reserves, axes, step=step)
    for i in range(len(axes)):
        if axes[i].cap_w is not None and poly.alpha_w[i] >= axes[i].cap_w - 1e-6:
            continue  # clamped by the outer box, not by feasibility
        probe = np.zeros(len(axes))
        probe[i] = poly.alpha_w[i] + 1e3
        assert not event_is_tolerable(model, dispatch, reserves, step, axes, probe)


def test_pv_axis_alpha_tracks_headroom_over_time():
    model = two_bus(steps=2, load_des_w=1.0e6,
                    forecast_w=np.array([0.3e6, 0.9e6]), pv_cap_va=1.0e6)
    dispatch = solve_baseline(model, COSTS)
    reserves = ReserveSchedule.from_headroom(model, dispatch)
    axes = [AdversarialAxis(AXIS_PV_ERROR, "pv1")]
    polys = characterize_steps(model, dispatch, reserves, axes)
    assert polys[1].alpha_w[0] > polys[0].alpha_w[0]  # more sun, more tolerance


def test_infeasible_dispatch_point_flagged():
    model, dispatch, reserves = dg_toy()
    corrupt = dispatch
    # stay inside the device window (no clamping) but break the power balance
    corrupt.dg_p["dg1"] = corrupt.dg_p["dg1"] - 0.5e6
    reserves.up[("dg", "dg1")][:] = 0.0
    with pytest.raises(AxisInfeasible):
        characterize(model, corrupt, reserves,
                     [AdversarialAxis(AXIS_LOAD_INCREASE, "load1")], step=0)


def test_projection_geometry():
    poly = InnerPolytope(
        step=0,
        axes=[
            AdversarialAxis(AXIS_DG_LOSS, "dg1"),
            AdversarialAxis(AXIS_LOAD_INCREASE, "load1"),
            AdversarialAxis(AXIS_PV_ERROR, "pv1"),
        ],
        alpha_w=np.array([1.2e6, 0.4e6, 0.0]),
    )
    hull, degenerate = project_2d(poly, 0, 1)
    assert not degenerate
    assert set(hull) == {(0.0, 0.0), (1.2e6, 0.0), (0.0, 0.4e6)}
    # counterclockwise orientation (positive shoelace area)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(hull, hull[1:] + hull[:1]):
        area += x0 * y1 - x1 * y0
    assert area > 0

    # swapping axes reflects the polygon; area magnitude is unchanged
    hull_swapped, _ = project_2d(poly, 1, 0)
    area_swapped = 0.0
    for (x0, y0), (x1, y1) in zip(hull_swapped, hull_swapped[1:] + hull_swapped[:1]):
        area_swapped += x0 * y1 - x1 * y0
    assert abs(area_swapped) == pytest.approx(abs(area))

    # the axis with alpha = 0 collapses the projection to a segment
    seg, degenerate = project_2d(poly, 2, 0)
    assert degenerate

    with pytest.raises(ValueError):
        project_2d(poly, 1, 1)


def test_sampled_points_inside_projection():
    model, dispatch, reserves = dg_toy()
    axes = [
        AdversarialAxis(AXIS_LOAD_INCREASE, "load1"),
        AdversarialAxis(AXIS_DG_LOSS, "dg1"),
    ]
    poly = characterize(model, dispatch, reserves, axes, step=0)
    hull, degenerate = project_2d(poly, 0, 1)
    assert not degenerate
    pts = sample(poly, seed=5, count=100)[:, [0, 1]]
    # convex hull membership via half-plane checks (ccw edges)
    for x, y in pts:
        for (x0, y0), (x1, y1) in zip(hull, hull[1:] + hull[:1]):
            cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
            assert cross >= -1e-3


def test_polytope_json_round_trip():
    poly = InnerPolytope(
        step=3,
        axes=[AdversarialAxis(AXIS_DG_LOSS, "dg1", cap_w=1.6e6)],
        alpha_w=np.array([0.9e6]),
    )
    doc = poly.to_json_dict()
    back = InnerPolytope.from_json_dict(doc)
    assert back.step == 3
    assert back.axes == poly.axes
    np.testing.assert_array_equal(back.alpha_w, poly.alpha_w)
