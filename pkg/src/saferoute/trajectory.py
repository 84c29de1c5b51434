"""Vehicle tracks, finite-difference kinematics and leader/follower relations.

Positions are longitudinal metres along a lane, measured at the front bumper.
Planar ``x``/``y`` coordinates are optional and only used for the angle to
the vehicle in front.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import InsufficientDataError, NoSegmentError

FRAME_PERIOD = 0.05  # 20 fps roadside video

LANE_SHAPES = ("straight", "left_turn", "right_turn", "merge", "diverge")

STANDSTILL_DISTANCE = 2.0  # m
REACTION_HEADWAY = {1: 1.5, 2: 0.9}  # s, by driver type
LANE_CHANGE_FACTOR = 0.6
QUEUE_MIN_GAP = 15.0  # m


@dataclass(frozen=True)
class TrackPoint:
    vehicle_id: str
    t: float
    s: float
    lane_id: str
    segment_id: str | None = None
    heading: float = 0.0
    speed: float | None = None
    accel: float | None = None
    x: float | None = None
    y: float | None = None

    def __post_init__(self):
        if self.speed is not None and self.speed < 0:
            raise ValueError(f"negative speed {self.speed} for {self.vehicle_id}")


@dataclass(frozen=True)
class LeaderContext:
    leader_id: str | None
    gap: float | None = None
    delta_v: float | None = None
    delta_a: float | None = None
    angle_to_front: float = 0.0
    in_queue: bool = False

    @property
    def has_leader(self) -> bool:
        return self.leader_id is not None


@dataclass(frozen=True)
class LaneShape:
    lane_id: str
    shape: str
    speed_limit: float
    length: float

    def __post_init__(self):
        if self.shape not in LANE_SHAPES:
            raise ValueError(f"unknown lane shape {self.shape!r}")
        if self.length <= 0 or self.speed_limit <= 0:
            raise ValueError(f"lane {self.lane_id}: length and speed_limit must be positive")


@dataclass(frozen=True)
class Segment:
    segment_id: str
    lane_ids: tuple[str, ...]
    start: float
    end: float

    def covers(self, lane_id: str, s: float) -> bool:
        return lane_id in self.lane_ids and self.start <= s < self.end


@dataclass(frozen=True)
class SegmentMap:
    """Road segments as half-open ``[start, end)`` intervals on one or more lanes."""

    segments: tuple[Segment, ...]
    historical_crashes: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        by_lane: dict[str, list[Segment]] = {}
        for seg in self.segments:
            if seg.end <= seg.start:
                raise ValueError(f"segment {seg.segment_id} has empty interval")
            for lane in seg.lane_ids:
                by_lane.setdefault(lane, []).append(seg)
        for lane, segs in by_lane.items():
            segs = sorted(segs, key=lambda g: g.start)
            for a, b in zip(segs, segs[1:]):
                if b.start < a.end:
                    raise ValueError(f"segments {a.segment_id} and {b.segment_id} overlap on lane {lane}")
        for sid, n in self.historical_crashes.items():
            if n < 0:
                raise ValueError(f"negative crash count for segment {sid}")

    @property
    def segment_ids(self) -> list[str]:
        return [seg.segment_id for seg in self.segments]

    def crashes(self, segment_id: str) -> float:
        return float(self.historical_crashes.get(segment_id, 0.0))

    @classmethod
    def from_dict(cls, items: Iterable[Mapping]) -> "SegmentMap":
        segments, crashes = [], {}
        for item in items:
            lanes = item["lanes"]
            if isinstance(lanes, str):
                lanes = [lanes]
            segments.append(Segment(str(item["id"]), tuple(str(x) for x in lanes),
                                    float(item["start"]), float(item["end"])))
            crashes[str(item["id"])] = float(item.get("crashes_per_year", 0.0))
        return cls(tuple(segments), crashes)

    def to_dict(self) -> list[dict]:
        return [{"id": seg.segment_id, "lanes": list(seg.lane_ids), "start": seg.start,
                 "end": seg.end, "crashes_per_year": self.crashes(seg.segment_id)}
                for seg in self.segments]


def kinematics(t: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Speed and acceleration at every sample of one track.

    Central differences in the interior, one-sided at both ends.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if t.size < 3:
        raise InsufficientDataError(f"need at least 3 samples for kinematics, got {t.size}")
    speed = _diff(s, t)
    return speed, _diff(speed, t)


def _diff(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    out[1:-1] = (y[2:] - y[:-2]) / (t[2:] - t[:-2])
    out[0] = (y[1] - y[0]) / (t[1] - t[0])
    out[-1] = (y[-1] - y[-2]) / (t[-1] - t[-2])
    return out


def kinematics_at(samples: Sequence[tuple[float, float]], t: float) -> tuple[float, float]:
    """Speed (m/s) and acceleration (m/s^2) at time ``t`` from raw ``(t, s)`` samples."""
    if len(samples) < 3:
        raise InsufficientDataError(f"need at least 3 samples for kinematics, got {len(samples)}")
    arr = np.asarray(samples, dtype=float)
    ts, ss = arr[:, 0], arr[:, 1]
    if not ts[0] <= t <= ts[-1]:
        raise InsufficientDataError(f"t={t} outside sample range [{ts[0]}, {ts[-1]}]")
    speed, accel = kinematics(ts, ss)
    return float(np.interp(t, ts, speed)), float(np.interp(t, ts, accel))


def safe_distance(driver_type: int, speed, lane_changing=False):
    """Car-following safe distance: standstill gap plus reaction headway.

    Works elementwise on arrays; ``driver_type`` must be 1 (average) or 2 (aggressive).
    """
    if np.ndim(driver_type) == 0:
        tau = REACTION_HEADWAY[int(driver_type)]
    else:
        tau = np.where(np.asarray(driver_type) == 2, REACTION_HEADWAY[2], REACTION_HEADWAY[1])
    base = STANDSTILL_DISTANCE + tau * np.asarray(speed, dtype=float)
    out = np.where(lane_changing, base * LANE_CHANGE_FACTOR, base)
    return float(out) if out.ndim == 0 else out


def queue_threshold(driver_type, speed, lane_changing=False):
    return np.maximum(2.0 * safe_distance(driver_type, speed, lane_changing), QUEUE_MIN_GAP)


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    return a - 2 * np.pi * np.ceil((a - np.pi) / (2 * np.pi))


def _angle_to(follower: TrackPoint, leader: TrackPoint) -> float:
    if None in (follower.x, follower.y, leader.x, leader.y):
        return 0.0
    bearing = math.atan2(leader.y - follower.y, leader.x - follower.x)
    return float(wrap_angle(bearing - follower.heading))


def find_leader(points: Iterable[TrackPoint], follower_id: str, driver_type: int = 1,
                lane_changing: bool = False) -> LeaderContext:
    """Nearest vehicle strictly ahead of ``follower_id`` in the same lane.

    ``points`` are the observations of all vehicles at one timestamp.
    """
    points = list(points)
    me = next((p for p in points if p.vehicle_id == follower_id), None)
    if me is None:
        raise KeyError(f"no observation for vehicle {follower_id!r}")
    ahead = [p for p in points
             if p.vehicle_id != follower_id and p.lane_id == me.lane_id and p.s > me.s]
    if not ahead:
        return LeaderContext(None)
    lead = min(ahead, key=lambda p: (p.s, p.vehicle_id))
    gap = lead.s - me.s
    v_f, v_l = me.speed or 0.0, lead.speed or 0.0
    a_f, a_l = me.accel or 0.0, lead.accel or 0.0
    in_queue = bool(gap < queue_threshold(driver_type, v_f, lane_changing))
    return LeaderContext(lead.vehicle_id, gap, v_f - v_l, a_f - a_l, _angle_to(me, lead), in_queue)


def segment_of(segment_map: SegmentMap, lane_id: str, s: float) -> str:
    for seg in segment_map.segments:
        if seg.covers(lane_id, s):
            return seg.segment_id
    raise NoSegmentError(f"no segment covers lane {lane_id!r} at s={s}")


def assign_segments(segment_map: SegmentMap, lane_ids: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Vectorised :func:`segment_of`; raises if any position is uncovered."""
    lane_ids = np.asarray(lane_ids).astype(str)
    s = np.asarray(s, dtype=float)
    out = np.full(s.shape, "", dtype=object)
    hit = np.zeros(s.shape, dtype=bool)
    for seg in segment_map.segments:
        m = np.isin(lane_ids, seg.lane_ids) & (s >= seg.start) & (s < seg.end)
        out[m] = seg.segment_id
        hit |= m
    if not hit.all():
        i = int(np.flatnonzero(~hit)[0])
        raise NoSegmentError(f"no segment covers lane {lane_ids[i]!r} at s={s[i]}")
    return out


def fill_kinematics(tracks: pd.DataFrame) -> pd.DataFrame:
    """Add ``speed``/``accel`` columns by finite differences where they are missing."""
    tracks = tracks.sort_values(["vehicle_id", "t"], kind="mergesort").reset_index(drop=True)
    for col in ("speed", "accel"):
        if col not in tracks:
            tracks[col] = np.nan
    need = tracks["speed"].isna() | tracks["accel"].isna()
    if not need.any():
        return tracks
    for vid, idx in tracks.groupby("vehicle_id", sort=False).indices.items():
        if not need.iloc[idx].any():
            continue
        speed, accel = kinematics(tracks["t"].to_numpy()[idx], tracks["s"].to_numpy()[idx])
        sp = tracks["speed"].to_numpy()[idx]
        ac = tracks["accel"].to_numpy()[idx]
        tracks.loc[idx, "speed"] = np.where(np.isnan(sp), np.maximum(speed, 0.0), sp)
        tracks.loc[idx, "accel"] = np.where(np.isnan(ac), accel, ac)
    return tracks


def leader_table(tracks: pd.DataFrame) -> pd.DataFrame:
    """Leader of every track row, computed for all timestamps at once.

    Returns a frame aligned with ``tracks`` holding ``leader_id``, ``gap``,
    ``delta_v``, ``delta_a`` and ``angle_to_front`` (NaN/None when leaderless).
    Agrees with :func:`find_leader` row by row.
    """
    n = len(tracks)
    t_key = np.round(tracks["t"].to_numpy() / FRAME_PERIOD).astype(np.int64)
    lane = tracks["lane_id"].astype(str).to_numpy()
    _, lane_code = np.unique(lane, return_inverse=True)
    s = tracks["s"].to_numpy(dtype=float)
    vid = tracks["vehicle_id"].astype(str).to_numpy()
    order = np.lexsort((vid, s, lane_code, t_key))
    same_group = np.zeros(n, dtype=bool)
    nxt = np.full(n, -1, dtype=np.int64)
    if n > 1:
        a, b = order[:-1], order[1:]
        same_group[a] = (t_key[a] == t_key[b]) & (lane_code[a] == lane_code[b])
        nxt[a] = np.where(same_group[a], b, -1)
    # equal positions are not "ahead"; walk forward past ties
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    tie = (nxt >= 0) & (s[np.maximum(nxt, 0)] <= s)
    for i in np.flatnonzero(tie):
        j = rank[i] + 1
        nxt[i] = -1
        while j < n:
            k = order[j]
            if t_key[k] != t_key[i] or lane_code[k] != lane_code[i]:
                break
            if s[k] > s[i]:
                nxt[i] = k
                break
            j += 1
    has = nxt >= 0
    li = np.where(has, nxt, 0)
    speed = tracks["speed"].to_numpy(dtype=float)
    accel = tracks["accel"].to_numpy(dtype=float)
    out = pd.DataFrame(index=tracks.index)
    out["leader_id"] = np.where(has, vid[li], None)
    out["gap"] = np.where(has, s[li] - s, np.nan)
    out["delta_v"] = np.where(has, speed - speed[li], np.nan)
    out["delta_a"] = np.where(has, accel - accel[li], np.nan)
    angle = np.zeros(n)
    if {"x", "y"} <= set(tracks.columns):
        x = tracks["x"].to_numpy(dtype=float)
        y = tracks["y"].to_numpy(dtype=float)
        heading = tracks["heading"].to_numpy(dtype=float) if "heading" in tracks else np.zeros(n)
        bearing = np.arctan2(y[li] - y, x[li] - x)
        angle = np.where(has & np.isfinite(bearing), wrap_angle(bearing - heading), 0.0)
    out["angle_to_front"] = angle
    return out
