"""Traffic conflict indicators (TTC, MTTC, DRAC), thresholds and future labels.

All three indicator functions accept scalars or numpy arrays. ``gap`` is the
front-bumper headway to the leader and must be strictly positive.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidGeometryError, LabelUnavailableError

TTC_THRESHOLD = 1.5  # s
MTTC_THRESHOLD = 1.5  # s
DRAC_THRESHOLD = 3.35  # m/s^2
ACCEL_EPS = 1e-6  # below this |delta_a| MTTC falls back to TTC

INDICATORS = ("ttc", "mttc", "drac")


@dataclass(frozen=True)
class Thresholds:
    ttc_threshold_s: float = TTC_THRESHOLD
    mttc_threshold_s: float = MTTC_THRESHOLD
    drac_threshold_ms2: float = DRAC_THRESHOLD

    def conflict(self, kind: str, value):
        """Elementwise conflict test: strict ``<`` for times, ``>=`` for DRAC."""
        value = np.asarray(value, dtype=float)
        if kind == "ttc":
            out = value < self.ttc_threshold_s
        elif kind == "mttc":
            out = value < self.mttc_threshold_s
        elif kind == "drac":
            out = value >= self.drac_threshold_ms2
        else:
            raise ValueError(f"unknown indicator {kind!r}")
        return bool(out) if out.ndim == 0 else out


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class TciValues:
    ttc: float
    mttc: float
    drac: float


@dataclass(frozen=True)
class ConflictFlags:
    ttc_conflict: bool
    mttc_conflict: bool
    drac_conflict: bool

    def as_tuple(self) -> tuple[bool, bool, bool]:
        return (self.ttc_conflict, self.mttc_conflict, self.drac_conflict)

    @property
    def count(self) -> int:
        return sum(self.as_tuple())


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _check_gap(gap) -> np.ndarray:
    gap = np.asarray(gap, dtype=float)
    if np.any(~(gap > 0)):
        raise InvalidGeometryError("gap to leader must be strictly positive")
    return gap


def compute_ttc(gap, v_f, v_l):
    """Gap over closing speed; +inf when the follower is not closing in."""
    gap = _check_gap(gap)
    closing = np.asarray(v_f, dtype=float) - np.asarray(v_l, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(closing > 0, gap / closing, np.inf)
    return _scalar_or_array(out)


def compute_mttc(gap, delta_v, delta_a):
    """Time until the gap closes under constant relative acceleration.

    Smallest positive root of ``0.5*delta_a*t**2 + delta_v*t - gap = 0``
    with ``delta_v = v_F - v_L`` and ``delta_a = a_F - a_L``.
    """
    gap = _check_gap(gap)
    dv = np.asarray(delta_v, dtype=float)
    da = np.asarray(delta_a, dtype=float)
    gap, dv, da = np.broadcast_arrays(gap, dv, da)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ttc_like = np.where(dv > 0, gap / dv, np.inf)
        a = 0.5 * da
        disc = dv * dv + 2.0 * da * gap
        root = np.sqrt(np.where(disc >= 0, disc, 0.0))
        # numerically stable pair of roots: q/a and c/q
        q = -0.5 * (dv + np.where(dv >= 0, root, -root))
        r1 = q / a
        r2 = -gap / q
        r1 = np.where(r1 > 0, r1, np.inf)
        r2 = np.where(r2 > 0, r2, np.inf)
        quad = np.where(disc >= 0, np.minimum(r1, r2), np.inf)
    out = np.where(np.abs(da) < ACCEL_EPS, ttc_like, quad)
    return _scalar_or_array(out)


def compute_drac(gap, v_f, v_l):
    """Deceleration the follower needs to avoid striking the leader (0 when not closing)."""
    gap = _check_gap(gap)
    closing = np.asarray(v_f, dtype=float) - np.asarray(v_l, dtype=float)
    out = np.where(closing > 0, closing * closing / (2.0 * gap), 0.0)
    return _scalar_or_array(out)


def compute_tci(gap: float, v_f: float, v_l: float, a_f: float = 0.0, a_l: float = 0.0) -> TciValues:
    return TciValues(compute_ttc(gap, v_f, v_l), compute_mttc(gap, v_f - v_l, a_f - a_l),
                     compute_drac(gap, v_f, v_l))


def conflict_flags(values: TciValues, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> ConflictFlags:
    return ConflictFlags(thresholds.conflict("ttc", values.ttc),
                         thresholds.conflict("mttc", values.mttc),
                         thresholds.conflict("drac", values.drac))


def indicator_arrays(gap, v_f, v_l, a_f, a_l) -> dict[str, np.ndarray]:
    """All three indicators for arrays where ``gap`` may be NaN (no leader).

    Leaderless rows get TTC = MTTC = +inf and DRAC = 0.
    """
    gap = np.asarray(gap, dtype=float)
    has = np.isfinite(gap) & (gap > 0)
    g = np.where(has, gap, 1.0)
    v_f = np.asarray(v_f, dtype=float)
    v_l = np.where(has, v_l, v_f)
    a_f = np.asarray(a_f, dtype=float)
    a_l = np.where(has, a_l, a_f)
    ttc = np.where(has, compute_ttc(g, v_f, v_l), np.inf)
    mttc = np.where(has, compute_mttc(g, v_f - v_l, a_f - a_l), np.inf)
    drac = np.where(has, compute_drac(g, v_f, v_l), 0.0)
    return {"ttc": ttc, "mttc": mttc, "drac": drac}


def label_future(timeline: Sequence[tuple], t0: float, horizon: float,
                 thresholds: Thresholds = DEFAULT_THRESHOLDS) -> ConflictFlags:
    """Flags for indicators crossing their threshold anywhere in ``(t0, t0 + horizon]``.

    ``timeline`` holds ``(t, gap, v_F, v_L, a_F, a_L)`` samples for one follower;
    ``gap`` may be None or NaN when there is no leader at that sample.
    """
    eps = 1e-9
    rows = sorted(timeline, key=lambda r: r[0])
    if not rows or rows[0][0] > t0 + eps or rows[-1][0] < t0 + horizon - eps:
        raise LabelUnavailableError(f"timeline does not cover [{t0}, {t0 + horizon}]")
    flags = [False, False, False]
    for t, gap, v_f, v_l, a_f, a_l in rows:
        if not (t0 + eps < t <= t0 + horizon + eps):
            continue
        if gap is None or not np.isfinite(gap):
            continue
        vals = compute_tci(gap, v_f, v_l, a_f, a_l)
        for i, hit in enumerate(conflict_flags(vals, thresholds).as_tuple()):
            flags[i] = flags[i] or hit
    return ConflictFlags(*flags)


def future_any(conflict: np.ndarray, frames: int) -> np.ndarray:
    """For each sample ``i`` whether ``conflict[i+1 : i+frames+1]`` has any True.

    Vectorised counterpart of :func:`label_future` on a uniform timeline;
    samples without a full future window come back False.
    """
    c = np.concatenate([[0], np.cumsum(conflict.astype(np.int64))])
    n = conflict.size
    i = np.arange(n)
    hi = np.minimum(i + frames + 1, n)
    return (c[hi] - c[i + 1]) > 0
