import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from saferoute.errors import InvalidGeometryError, LabelUnavailableError
from saferoute.tci import (DEFAULT_THRESHOLDS, TciValues, Thresholds, compute_drac, compute_mttc,
                           compute_tci, compute_ttc, conflict_flags, future_any, indicator_arrays,
                           label_future)

from oracles import first_collision

speeds = st.floats(0, 40)
gaps = st.floats(0.5, 200)


def test_ttc_examples():
    assert compute_ttc(30, 20, 10) == 3.0
    assert compute_ttc(30, 10, 10) == math.inf
    assert compute_ttc(12, 18, 10) == 1.5
    assert not conflict_flags(compute_tci(12, 18, 10)).ttc_conflict


def test_mttc_examples():
    assert compute_mttc(30, 10, 0) == 3.0
    assert compute_mttc(30, 0, 2) == pytest.approx(math.sqrt(30), abs=1e-12)
    assert compute_mttc(30, -5, 0) == math.inf


def test_mttc_opening_but_accelerating_towards():
    # gap first opens, then closes: 0.5*2*t^2 - 5t - 30 = 0 -> t = (5 + sqrt(145)) / 2
    assert compute_mttc(30, -5, 2) == pytest.approx((5 + math.sqrt(145)) / 2)
    # closing but decelerating hard enough never to touch
    assert compute_mttc(30, 5, -2) == math.inf


def test_drac_examples():
    assert compute_drac(30, 20, 10) == pytest.approx(100 / 60)
    assert not conflict_flags(compute_tci(30, 20, 10)).drac_conflict
    assert compute_drac(30, 10, 20) == 0.0
    assert compute_drac(5, 20, 10) == 10.0
    assert conflict_flags(compute_tci(5, 20, 10)).drac_conflict


@pytest.mark.parametrize("fn,args", [(compute_ttc, (0, 1, 0)), (compute_mttc, (-1, 1, 0)),
                                     (compute_drac, (0, 1, 0)), (compute_ttc, (math.nan, 1, 0))])
def test_non_positive_gap_rejected(fn, args):
    with pytest.raises(InvalidGeometryError):
        fn(*args)


def test_threshold_boundaries():
    th = DEFAULT_THRESHOLDS
    assert not th.conflict("ttc", 1.5) and th.conflict("ttc", 1.5 - 1e-9)
    assert not th.conflict("mttc", 1.5) and th.conflict("mttc", 1.5 - 1e-9)
    assert th.conflict("drac", 3.35) and not th.conflict("drac", 3.35 - 1e-9)
    assert conflict_flags(TciValues(1.5, 1.5, 3.35)).as_tuple() == (False, False, True)
    assert Thresholds(ttc_threshold_s=2.0).conflict("ttc", 1.9)


@given(gaps, gaps, speeds, speeds)
def test_ttc_increases_and_drac_decreases_in_gap(g1, g2, v_f, v_l):
    assume(v_f > v_l + 1e-3 and abs(g1 - g2) > 1e-6)
    lo, hi = sorted((g1, g2))
    assert compute_ttc(lo, v_f, v_l) < compute_ttc(hi, v_f, v_l)
    assert compute_drac(lo, v_f, v_l) > compute_drac(hi, v_f, v_l)


@given(gaps, speeds, speeds)
def test_zero_relative_accel_mttc_is_ttc(gap, v_f, v_l):
    assert compute_mttc(gap, v_f - v_l, 0.0) == compute_ttc(gap, v_f, v_l)


@given(gaps, speeds, speeds)
def test_drac_ttc_relation(gap, v_f, v_l):
    ttc = compute_ttc(gap, v_f, v_l)
    assume(math.isfinite(ttc))
    assert compute_drac(gap, v_f, v_l) == pytest.approx((v_f - v_l) / (2 * ttc), rel=1e-12)


@given(gaps, st.floats(-30, 30), st.floats(-8, 8))
def test_mttc_is_a_positive_root(gap, dv, da):
    t = compute_mttc(gap, dv, da)
    if abs(da) < 1e-6:
        assert t == compute_ttc(gap, dv, 0.0)
    elif math.isfinite(t):
        assert t > 0
        terms = (0.5 * da * t * t, dv * t, -gap)
        assert abs(sum(terms)) <= 1e-9 * sum(abs(x) for x in terms)


def test_mttc_matches_forward_simulation_on_a_sample():
    rng = np.random.default_rng(11)
    n = 200
    gap = rng.uniform(1, 60, n)
    v_f, v_l = rng.uniform(0, 30, (2, n))
    a_f, a_l = rng.uniform(-3, 3, (2, n))
    mttc = compute_mttc(gap, v_f - v_l, a_f - a_l)
    sim = first_collision(gap, v_f, v_l, a_f, a_l, horizon=20.0)
    both_none = ~np.isfinite(sim) & (mttc > 20.0)
    close = np.isfinite(sim) & (np.abs(np.where(np.isfinite(sim), sim, 0.0) - mttc) <= 0.02)
    assert np.all(both_none | close)


def test_arrays_and_leaderless_rows():
    out = indicator_arrays([np.nan, 10.0], [10.0, 20.0], [0.0, 10.0], [0.0, 0.0], [0.0, 0.0])
    assert out["ttc"][0] == math.inf and out["drac"][0] == 0.0
    assert out["ttc"][1] == 1.0 and out["drac"][1] == 5.0


def _timeline(t0, gap_fn, dt=0.05, span=2.0):
    return [(t0 + k * dt, gap_fn(k * dt), 20.0, 10.0, 0.0, 0.0) for k in range(int(round(span / dt)) + 1)]


def test_label_constant_violation():
    flags = label_future(_timeline(0.0, lambda tau: 5.0), 0.0, 1.0)
    assert flags.as_tuple() == (True, True, True)


def test_label_no_interaction():
    tl = [(k * 0.05, 30.0, 10.0, 10.0, 0.0, 0.0) for k in range(50)]
    assert label_future(tl, 0.0, 2.0).as_tuple() == (False, False, False)


def test_label_braking_leader_crosses_at_0_8s():
    # closing at 10 m/s, TTC = 2.29 - tau, first below 1.5 s at tau = 0.8
    tl = _timeline(3.0, lambda tau: 10.0 * (2.29 - tau))
    ttc_at = {round(t - 3.0, 2): compute_ttc(g, vf, vl) for t, g, vf, vl, *_ in tl}
    assert ttc_at[0.75] >= 1.5 > ttc_at[0.8]
    assert label_future(tl, 3.0, 1.0).ttc_conflict
    assert label_future(tl, 3.0, 2.0).ttc_conflict
    assert not label_future(tl, 3.0, 0.5).ttc_conflict


def test_label_ignores_t0_itself():
    tl = [(0.0, 1.0, 20.0, 0.0, 0.0, 0.0)] + [(k * 0.05, 100.0, 10.0, 10.0, 0.0, 0.0) for k in range(1, 30)]
    assert label_future(tl, 0.0, 1.0).as_tuple() == (False, False, False)


def test_label_unavailable_without_future():
    with pytest.raises(LabelUnavailableError):
        label_future(_timeline(0.0, lambda tau: 30.0, span=1.0), 0.0, 2.0)


def test_future_any_matches_definition():
    rng = np.random.default_rng(0)
    c = rng.random(200) < 0.1
    for frames in (1, 5, 20):
        got = future_any(c, frames)
        for i in range(200):
            assert got[i] == c[i + 1:i + frames + 1].any()
