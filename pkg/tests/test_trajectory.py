import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from saferoute.errors import InsufficientDataError, NoSegmentError
from saferoute.trajectory import (LaneShape, Segment, SegmentMap, fill_kinematics, find_leader,
                                  kinematics_at, leader_table, safe_distance, segment_of)

from conftest import point

DT = 0.05


def samples(fn, n=40):
    return [(i * DT, fn(i * DT)) for i in range(n)]


def test_stationary_vehicle():
    v, a = kinematics_at(samples(lambda t: 50.0), 0.5)
    assert v == 0.0 and a == 0.0


def test_one_metre_per_frame_is_20_mps():
    v, a = kinematics_at(samples(lambda t: 20.0 * t), 1.0)
    assert v == pytest.approx(20.0, abs=1e-9)
    assert a == pytest.approx(0.0, abs=1e-9)


def test_quadratic_gives_constant_accel():
    data = samples(lambda t: 0.5 * 2.0 * t * t)
    for t in (0.5, 1.0, 1.5):
        assert kinematics_at(data, t)[1] == pytest.approx(2.0, abs=1e-6)


def test_kinematics_needs_three_samples():
    with pytest.raises(InsufficientDataError):
        kinematics_at([(0.0, 0.0), (0.05, 1.0)], 0.0)
    with pytest.raises(InsufficientDataError):
        kinematics_at(samples(lambda t: t), 10.0)


@given(st.floats(0, 40), st.floats(-100, 100))
def test_constant_speed_recovered(speed, s0):
    data = samples(lambda t: s0 + speed * t, 20)
    for k in range(1, 19):
        assert kinematics_at(data, k * DT)[0] == pytest.approx(speed, abs=1e-9)


def test_lone_vehicle_has_no_leader():
    ctx = find_leader([point("a", 10)], "a")
    assert ctx.leader_id is None and not ctx.has_leader


def test_gap_and_delta_v():
    ctx = find_leader([point("f", 70, 20), point("l", 100, 10)], "f")
    assert ctx.leader_id == "l"
    assert ctx.gap == 30 and ctx.delta_v == 10


def test_nearest_ahead_wins():
    pts = [point("f", 50), point("far", 120), point("near", 100), point("other", 60, lane="L2")]
    assert find_leader(pts, "f").leader_id == "near"


def test_angle_to_front_from_planar_positions():
    pts = [point("f", 0, x=0.0, y=0.0, heading=0.0), point("l", 10, x=10.0, y=10.0)]
    assert find_leader(pts, "f").angle_to_front == pytest.approx(math.pi / 4)


def test_in_queue_threshold():
    # type 1 at 10 m/s: safe 17 m, queue threshold max(34, 15) = 34 m
    assert find_leader([point("f", 0, 10), point("l", 33.9, 10)], "f").in_queue
    assert not find_leader([point("f", 0, 10), point("l", 34.0, 10)], "f").in_queue


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 500), st.sampled_from(["L1", "L2"])), min_size=2, max_size=12))
def test_leader_antisymmetric_and_exact_gap(rows):
    pts = [point(f"v{i}", s, lane=lane) for i, (s, lane) in enumerate(rows)]
    by_id = {p.vehicle_id: p for p in pts}
    leaders = {p.vehicle_id: find_leader(pts, p.vehicle_id) for p in pts}
    for vid, ctx in leaders.items():
        if ctx.leader_id is None:
            continue
        assert ctx.gap == by_id[ctx.leader_id].s - by_id[vid].s
        assert ctx.gap > 0
        assert leaders[ctx.leader_id].leader_id != vid


def test_leader_table_agrees_with_find_leader():
    rng = np.random.default_rng(3)
    rows = []
    for t in (0.0, 0.05):
        for i in range(15):
            rows.append({"vehicle_id": f"v{i}", "t": t, "s": float(rng.integers(0, 30)),
                         "lane_id": "L" + str(i % 2), "speed": float(rng.uniform(0, 20)),
                         "accel": float(rng.normal())})
    df = pd.DataFrame(rows)
    lt = leader_table(df)
    for t, grp in df.groupby("t"):
        pts = [point(r.vehicle_id, r.s, r.speed, r.lane_id, t, r.accel) for r in grp.itertuples()]
        for i, r in grp.iterrows():
            ctx = find_leader(pts, r.vehicle_id)
            if ctx.leader_id is None:
                assert lt.at[i, "leader_id"] is None
            else:
                assert lt.at[i, "gap"] == pytest.approx(ctx.gap)
                assert lt.at[i, "delta_v"] == pytest.approx(ctx.delta_v)


def test_fill_kinematics_only_where_missing():
    t = np.arange(10) * DT
    df = pd.DataFrame({"vehicle_id": "a", "t": t, "s": 5.0 * t, "lane_id": "L1"})
    out = fill_kinematics(df)
    assert np.allclose(out["speed"], 5.0) and np.allclose(out["accel"], 0.0)


@pytest.mark.parametrize("dtype,speed,changing,expected", [
    (1, 0, False, 2.0), (1, 20, False, 32.0), (2, 20, True, 12.0)])
def test_safe_distance_examples(dtype, speed, changing, expected):
    assert safe_distance(dtype, speed, changing) == pytest.approx(expected)


@given(st.floats(0, 60), st.floats(0, 60))
def test_safe_distance_monotone(a, b):
    lo, hi = sorted((a, b))
    for dtype in (1, 2):
        assert safe_distance(dtype, lo) <= safe_distance(dtype, hi)


@given(st.floats(0.01, 60), st.booleans())
def test_aggressive_distance_is_shorter(speed, changing):
    # at standstill both types keep the same 2 m
    assert safe_distance(2, speed, changing) < safe_distance(1, speed, changing)
    assert safe_distance(2, 0.0) == safe_distance(1, 0.0)


def test_segment_lookup():
    segs = SegmentMap((Segment("A", ("L1",), 0, 50), Segment("B", ("L1",), 50, 100)))
    assert segment_of(segs, "L1", 5) == "A"
    assert segment_of(segs, "L1", 50) == "B"
    with pytest.raises(NoSegmentError):
        segment_of(segs, "L1", 200)


def test_segment_map_validation():
    with pytest.raises(ValueError):
        SegmentMap((Segment("A", ("L1",), 0, 60), Segment("B", ("L1",), 50, 100)))
    with pytest.raises(ValueError):
        SegmentMap((Segment("A", ("L1",), 0, 50),), {"A": -1})
    with pytest.raises(ValueError):
        LaneShape("L1", "zigzag", 10, 100)
    with pytest.raises(ValueError):
        point("x", 0, -1.0)
