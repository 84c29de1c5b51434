"""Stream matching and feature-vector assembly.

App streams (face frames with GPS fixes) are tied to roadside tracks by
position and time. Each sampled vehicle-timestamp then becomes one row of
six feature groups: driver behaviour, road, vehicle status, distance, speed
and the history of the indicator being predicted. Rows from vehicles with a
matched stream use the full schema; all others the simplified one, which
keeps only the roadside-observable driver type.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .driver import (EAR_THRESHOLD, SPEEDING_MARGIN, MAX_ACCEL, MAX_DECEL, DegenerateCalibrationError,
                     assign_gaze, ear, emotions_from_au_matrix, fit_gaze_model, mar, performance_score, va_of)
from .errors import NotReadyError, SchemaError
from .learn.dataset import Column, Dataset
from .tci import DEFAULT_THRESHOLDS, INDICATORS, Thresholds, indicator_arrays
from .trajectory import (LANE_SHAPES, LaneShape, LeaderContext, SegmentMap, TrackPoint, assign_segments,
                         fill_kinematics, leader_table, queue_threshold, safe_distance)

log = logging.getLogger(__name__)

NO_LEADER_HDWY = 500.0  # m
INDICATOR_CAP = 99.0  # s, stands in for "never" in TTC/MTTC
HISTORY_LAG = 1.0  # s
LANE_CHANGE_WINDOW = 2.0  # s
DRIVER_WINDOW = 1.0  # s of face frames summarised per row

DRIVER_FIELDS = ("performance", "ear", "mar", "eyes_closed_frac", "on_road", "gaze_cluster")
TYPE_FIELDS = ("type1", "type2")
ROAD_FIELDS = tuple(f"shape_{s}" for s in LANE_SHAPES)
STATUS_FIELDS = ("is_leading", "in_queue", "heading", "angle_to_front")
DISTANCE_FIELDS = ("hdwy", "safe_distance")
SPEED_FIELDS = ("speed", "accel", "delta_v")
HISTORY_FIELDS = ("ind_prev", "ind_now")

_BINARY = {"on_road", "type1", "type2", "is_leading", "in_queue", *ROAD_FIELDS}
_CATEGORICAL = {"gaze_cluster"}

SENTINEL_NOTE = (f"sentinels: no leader -> hdwy={NO_LEADER_HDWY:g}, delta_v=0, angle_to_front=0, is_leading=1; "
                 f"ttc/mttc without closing capped at {INDICATOR_CAP:g}; driver columns empty on simplified rows")


def _kind(name: str) -> str:
    if name in _BINARY:
        return "binary"
    if name in _CATEGORICAL:
        return "categorical"
    return "continuous"


def feature_names(variant: str = "full") -> tuple[str, ...]:
    if variant not in ("full", "simplified"):
        raise ValueError(f"unknown variant {variant!r}")
    driver = (DRIVER_FIELDS if variant == "full" else ()) + TYPE_FIELDS
    return driver + ROAD_FIELDS + STATUS_FIELDS + DISTANCE_FIELDS + SPEED_FIELDS + HISTORY_FIELDS


def columns(variant: str = "full") -> tuple[Column, ...]:
    return tuple(Column(n, _kind(n)) for n in feature_names(variant))


def encode_indicator(kind: str, value):
    """Learner encoding of an indicator value: infinite times become the cap."""
    v = np.asarray(value, dtype=float)
    if kind in ("ttc", "mttc"):
        v = np.minimum(v, INDICATOR_CAP)
    out = np.where(np.isfinite(v), v, INDICATOR_CAP)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DriverSummary:
    """Face-stream features aggregated over the second before a row."""

    performance: float
    ear: float
    mar: float
    eyes_closed_frac: float
    on_road: bool
    gaze_cluster: int


@dataclass(frozen=True)
class FeatureVector:
    driver_behavior: Mapping[str, float]  # full: driver summary + type; simplified: type only
    road: Mapping[str, float]
    vehicle_status: Mapping[str, float]
    distance: Mapping[str, float]
    speed: Mapping[str, float]
    indicator_history: Mapping[str, float]

    @property
    def variant(self) -> str:
        return "full" if len(self.driver_behavior) > len(TYPE_FIELDS) else "simplified"

    def as_dict(self) -> dict[str, float]:
        merged = {**self.driver_behavior, **self.road, **self.vehicle_status, **self.distance,
                  **self.speed, **self.indicator_history}
        return {name: float(merged[name]) for name in feature_names(self.variant)}

    def encode(self) -> np.ndarray:
        return np.array(list(self.as_dict().values()), dtype=np.float64)


def assemble(point: TrackPoint, leader: LeaderContext, lane: LaneShape, driver: DriverSummary | None,
             kind: str, history, driver_type: int = 1, lane_changing: bool = False) -> FeatureVector:
    """Feature vector for one vehicle at one timestamp.

    ``history`` is ``(value at t-1 s, value at t)`` of indicator ``kind``;
    a missing entry (first second of a track) raises :class:`NotReadyError`.
    """
    if kind not in INDICATORS:
        raise ValueError(f"unknown indicator {kind!r}")
    if history is None or len(history) != 2 or any(h is None or np.isnan(h) for h in history):
        raise NotReadyError("indicator history needs values at t-1 s and t")
    if driver_type not in (1, 2):
        raise ValueError("driver_type must be 1 or 2")
    speed = float(point.speed or 0.0)
    accel = float(point.accel or 0.0)
    types = {"type1": float(driver_type == 1), "type2": float(driver_type == 2)}
    if driver is not None:
        drv = {"performance": driver.performance, "ear": driver.ear, "mar": driver.mar,
               "eyes_closed_frac": driver.eyes_closed_frac, "on_road": float(driver.on_road),
               "gaze_cluster": float(driver.gaze_cluster), **types}
    else:
        drv = types
    road = {f"shape_{s}": float(lane.shape == s) for s in LANE_SHAPES}
    if leader.has_leader:
        in_queue = leader.gap < queue_threshold(driver_type, speed, lane_changing)
        status = {"is_leading": 0.0, "in_queue": float(in_queue), "heading": point.heading,
                  "angle_to_front": leader.angle_to_front}
        dist_grp = {"hdwy": leader.gap}
        dv = leader.delta_v
    else:
        status = {"is_leading": 1.0, "in_queue": 0.0, "heading": point.heading, "angle_to_front": 0.0}
        dist_grp = {"hdwy": NO_LEADER_HDWY}
        dv = 0.0
    dist_grp["safe_distance"] = safe_distance(driver_type, speed, lane_changing)
    return FeatureVector(drv, road, status, dist_grp, {"speed": speed, "accel": accel, "delta_v": dv},
                         {"ind_prev": encode_indicator(kind, history[0]),
                          "ind_now": encode_indicator(kind, history[1])})


# ---------------------------------------------------------------- matching

@dataclass(frozen=True)
class MatchPair:
    stream_id: str
    vehicle_id: str
    position_residual: float  # m, mean over fixes
    time_residual: float  # s, mean over fixes


@dataclass
class MatchResult:
    pairs: list[MatchPair]
    unmatched_streams: list[str]
    unmatched_tracks: list[str]
    ambiguous: dict[str, list[str]] = field(default_factory=dict)  # stream -> all candidate tracks

    def stream_of(self) -> dict[str, str]:
        return {p.vehicle_id: p.stream_id for p in self.pairs}


def _stream_xy(stream, origin) -> np.ndarray:
    from .sim.face import from_gps
    return from_gps(stream.gps, origin)


def match_streams(streams: Sequence, tracks: pd.DataFrame, radius: float = 5.0, time_tol: float = 0.5,
                  origin=None, min_fraction: float = 0.8) -> MatchResult:
    """Tie app streams to roadside tracks.

    A (stream, track) pair is a candidate when at least ``min_fraction`` of
    the stream's fixes have a track sample within ``time_tol`` seconds and
    lie within ``radius`` metres of the track position at that time.
    Candidates are accepted greedily by smallest mean position residual,
    then time residual, then ids, never reusing a stream or a track.
    """
    from .sim.traffic import SITE_ORIGIN
    origin = SITE_ORIGIN if origin is None else origin
    track_ids = sorted(tracks["vehicle_id"].astype(str).unique()) if len(tracks) else []
    groups = tracks.groupby(tracks["vehicle_id"].astype(str), sort=True).indices if len(tracks) else {}
    tt_all = tracks["t"].to_numpy(dtype=float) if len(tracks) else np.zeros(0)
    x_all = (tracks["x"] if "x" in tracks else tracks["s"]).to_numpy(dtype=float) if len(tracks) else np.zeros(0)
    y_all = tracks["y"].to_numpy(dtype=float) if "y" in tracks else np.zeros(len(tracks))
    spans = {vid: (tt_all[idx].min(), tt_all[idx].max()) for vid, idx in groups.items()}

    candidates = []
    per_stream: dict[str, list[str]] = {}
    for stream in sorted(streams, key=lambda s: s.stream_id):
        if len(stream) == 0:
            continue
        xy = _stream_xy(stream, origin)
        ts = np.asarray(stream.t, dtype=float)
        need = min_fraction * ts.size
        for vid in track_ids:
            lo, hi = spans[vid]
            in_span = np.count_nonzero((ts >= lo - time_tol) & (ts <= hi + time_tol))
            if in_span < need:
                continue
            idx = groups[vid]
            tt = tt_all[idx]
            j = np.clip(np.searchsorted(tt, ts), 1, tt.size - 1) if tt.size > 1 else np.zeros(ts.size, int)
            if tt.size > 1:
                nearest = np.where(np.abs(tt[j - 1] - ts) <= np.abs(tt[j] - ts), j - 1, j)
            else:
                nearest = j
            dt = np.abs(tt[nearest] - ts)
            px = np.interp(ts, tt, x_all[idx])
            py = np.interp(ts, tt, y_all[idx])
            dpos = np.hypot(px - xy[:, 0], py - xy[:, 1])
            ok = (dt <= time_tol) & (dpos <= radius)
            if np.count_nonzero(ok) < need:
                continue
            candidates.append((float(dpos[ok].mean()), float(dt[ok].mean()), stream.stream_id, vid))
            per_stream.setdefault(stream.stream_id, []).append(vid)

    candidates.sort()
    used_s, used_t, pairs = set(), set(), []
    for pos, tim, sid, vid in candidates:
        if sid in used_s or vid in used_t:
            continue
        used_s.add(sid)
        used_t.add(vid)
        pairs.append(MatchPair(sid, vid, pos, tim))
    ambiguous = {sid: sorted(v) for sid, v in per_stream.items() if len(v) > 1}
    for sid, v in ambiguous.items():
        log.info("stream %s had %d candidate tracks %s", sid, len(v), v)
    all_streams = sorted(s.stream_id for s in streams)
    pairs.sort(key=lambda p: p.stream_id)
    return MatchResult(pairs, [s for s in all_streams if s not in used_s],
                       [v for v in track_ids if v not in used_t], ambiguous)


# ------------------------------------------------------------- batch rows

def stream_features(stream, gaze=None) -> pd.DataFrame:
    """Per-frame driver features of one stream (EAR, MAR, gaze cluster, performance)."""
    if gaze is None:
        gaze = fit_gaze_model(stream.calibration, stream.road_reference)
    e = ear(stream.landmarks) if len(stream) else np.zeros(0)
    m = mar(stream.landmarks) if len(stream) else np.zeros(0)
    focus = np.asarray(stream.head_pose) + np.asarray(stream.eye_gaze)
    cluster, on_road = assign_gaze(gaze, focus.reshape(-1, 2)) if len(stream) else (np.zeros(0, int), np.zeros(0, bool))
    emotions = emotions_from_au_matrix(np.asarray(stream.aus).reshape(len(stream), -1), stream.au_numbers)
    va = np.array([va_of(x) for x in emotions]).reshape(-1, 2)
    perf = performance_score(va) if len(stream) else np.zeros(0)
    return pd.DataFrame({"t": stream.t, "ear": e, "mar": m, "closed": (np.asarray(e) < EAR_THRESHOLD),
                         "on_road": on_road, "cluster": cluster, "performance": perf,
                         "emotion": emotions})


def _window_summary(frames: pd.DataFrame, t: np.ndarray, window: float = DRIVER_WINDOW) -> pd.DataFrame:
    """Summaries of frames in ``(t - window, t]``; rows without frames come back NaN."""
    ft = frames["t"].to_numpy()
    lo = np.searchsorted(ft, t - window + 1e-9, side="left")
    hi = np.searchsorted(ft, t + 1e-9, side="right")
    cnt = hi - lo
    out = {}

    def mean_of(col):
        c = np.concatenate([[0.0], np.cumsum(frames[col].to_numpy(dtype=float))])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(cnt > 0, (c[hi] - c[lo]) / np.maximum(cnt, 1), np.nan)

    out["performance"] = mean_of("performance")
    out["ear"] = mean_of("ear")
    out["mar"] = mean_of("mar")
    out["eyes_closed_frac"] = mean_of("closed")
    out["on_road"] = np.where(cnt > 0, (mean_of("on_road") >= 0.5).astype(float), np.nan)
    onehot = np.stack([(frames["cluster"].to_numpy() == k).astype(float) for k in range(3)], axis=1)
    c = np.vstack([np.zeros((1, 3)), np.cumsum(onehot, axis=0)])
    counts = c[hi] - c[lo]
    out["gaze_cluster"] = np.where(cnt > 0, np.argmax(counts, axis=1).astype(float), np.nan)
    return pd.DataFrame(out)


@dataclass
class FusedTable:
    """Sampled rows with features, all indicator histories and future labels."""

    frame: pd.DataFrame
    horizons: tuple[int, ...] = (1, 2)

    META = ("vehicle_id", "t", "lane_id", "segment_id", "stream_id", "variant")

    def __len__(self) -> int:
        return len(self.frame)

    @staticmethod
    def label(kind: str, horizon: int) -> str:
        return f"{kind}_{int(horizon)}s"

    def dataset(self, kind: str, horizon: int, variant: str = "full", rows=None) -> Dataset:
        """Learner dataset for one target; ``rows`` optionally restricts to a boolean mask."""
        df = self.frame
        mask = np.ones(len(df), dtype=bool) if rows is None else np.array(rows, dtype=bool)
        if variant == "full":
            mask &= (df["variant"] == "full").to_numpy()
        X = self.matrix(kind, variant, mask)
        y = df[self.label(kind, horizon)].to_numpy()[mask]
        return Dataset(X, y, columns(variant), np.flatnonzero(mask).astype(np.int64),
                       meta={"kind": kind, "horizon": horizon, "variant": variant})

    def matrix(self, kind: str, variant: str, mask=None) -> np.ndarray:
        df = self.frame if mask is None else self.frame[np.asarray(mask, dtype=bool)]
        names = list(feature_names(variant))
        base = [n for n in names if n not in HISTORY_FIELDS]
        X = df[base].to_numpy(dtype=float)
        hist = df[[f"{kind}_prev", f"{kind}_now"]].to_numpy(dtype=float)
        return np.ascontiguousarray(np.hstack([X, hist]))

    def prevalence(self) -> float:
        """Fraction of rows with a conflict label on any indicator and horizon."""
        labels = [self.label(k, h) for k in INDICATORS for h in self.horizons]
        if not len(self.frame):
            return 0.0
        return float(self.frame[labels].to_numpy().any(axis=1).mean())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {SENTINEL_NOTE}\n")
            self.frame.to_csv(fh, index=False, lineterminator="\n")

    @classmethod
    def from_csv(cls, path) -> "FusedTable":
        df = pd.read_csv(path, comment="#", dtype={"vehicle_id": str, "lane_id": str, "segment_id": str,
                                                     "stream_id": str, "variant": str},
                         keep_default_na=False, na_values=[""])
        missing = [c for c in cls.META if c not in df]
        if missing:
            raise SchemaError(f"fused table lacks columns {missing}")
        df["stream_id"] = df["stream_id"].fillna("")
        horizons = sorted({int(c.split("_")[1][:-1]) for c in df.columns
                           if c.split("_")[0] in INDICATORS and c.endswith("s") and c.split("_")[1][:-1].isdigit()})
        return cls(df, tuple(horizons))


def build_table(tracks: pd.DataFrame, lanes: Mapping[str, LaneShape] | Iterable[LaneShape],
                segment_map: SegmentMap | None = None, streams: Sequence = (), sample_period: float = 0.5,
                horizons: Sequence[int] = (1, 2), thresholds: Thresholds = DEFAULT_THRESHOLDS,
                origin=None, radius: float = 5.0, time_tol: float = 0.5,
                match: MatchResult | None = None) -> FusedTable:
    """Assemble every sampled vehicle-timestamp whose history and future are both known.

    Rows sit on a ``sample_period`` grid; the first second of a track (no
    indicator history) and its last ``max(horizons)`` seconds (no label) are
    left out.
    """
    if not isinstance(lanes, Mapping):
        lanes = {l.lane_id: l for l in lanes}
    horizons = tuple(int(h) for h in horizons)
    if tracks is None or len(tracks) == 0:
        return FusedTable(_empty_frame(horizons), horizons)
    tr = fill_kinematics(tracks.copy())
    tr["vehicle_id"] = tr["vehicle_id"].astype(str)
    tr["lane_id"] = tr["lane_id"].astype(str)
    if "heading" not in tr:
        tr["heading"] = 0.0
    unknown = sorted(set(tr["lane_id"]) - set(lanes))
    if unknown:
        raise SchemaError(f"tracks reference unknown lanes {unknown}")
    if segment_map is not None:
        tr["segment_id"] = assign_segments(segment_map, tr["lane_id"].to_numpy(), tr["s"].to_numpy())
    elif "segment_id" not in tr:
        raise SchemaError("tracks carry no segment_id and no segment map was given")

    lead = leader_table(tr)
    n = len(tr)
    t = tr["t"].to_numpy(dtype=float)
    speed = tr["speed"].to_numpy(dtype=float)
    accel = tr["accel"].to_numpy(dtype=float)
    gap = lead["gap"].to_numpy(dtype=float)
    has = np.isfinite(gap)
    dv = lead["delta_v"].to_numpy(dtype=float)
    da = lead["delta_a"].to_numpy(dtype=float)
    ind = indicator_arrays(gap, speed, np.where(has, speed - dv, speed), accel, np.where(has, accel - da, accel))
    conflict = {k: np.asarray(thresholds.conflict(k, ind[k])) for k in INDICATORS}

    lane_arr = tr["lane_id"].to_numpy()
    limit = np.array([lanes[l].speed_limit for l in lane_arr])
    eps = 1e-6
    prev_idx = np.full(n, -1)
    future_ok = np.zeros(n, dtype=bool)
    labels = {(k, h): np.zeros(n, dtype=bool) for k in INDICATORS for h in horizons}
    lane_changing = np.zeros(n, dtype=bool)
    type2 = np.zeros(n, dtype=bool)
    hmax = max(horizons) if horizons else 0
    for vid, idx in tr.groupby("vehicle_id", sort=False).indices.items():
        tt = t[idx]
        j = np.searchsorted(tt, tt - HISTORY_LAG - eps, side="left")
        hit = (j < idx.size) & (np.abs(tt[np.minimum(j, idx.size - 1)] - (tt - HISTORY_LAG)) < eps)
        prev_idx[idx] = np.where(hit, idx[np.minimum(j, idx.size - 1)], -1)
        future_ok[idx] = tt[-1] >= tt + hmax - eps
        for k in INDICATORS:
            c = np.concatenate([[0], np.cumsum(conflict[k][idx].astype(np.int64))])
            for h in horizons:
                hi = np.searchsorted(tt, tt + h + eps, side="right")
                labels[(k, h)][idx] = (c[hi] - c[np.arange(idx.size) + 1]) > 0
        lanes_here = lane_arr[idx]
        changes = np.concatenate([[0], np.cumsum(lanes_here[1:] != lanes_here[:-1])])
        back = np.searchsorted(tt, tt - LANE_CHANGE_WINDOW - eps, side="left")
        lane_changing[idx] = changes - changes[back] > 0
        rough = ((speed[idx] > limit[idx] + SPEEDING_MARGIN) | (accel[idx] > MAX_ACCEL)
                 | (accel[idx] < -MAX_DECEL))
        type2[idx] = np.maximum.accumulate(rough)

    on_grid = np.abs(t / sample_period - np.round(t / sample_period)) < 1e-6
    keep = np.flatnonzero(on_grid & (prev_idx >= 0) & future_ok)

    dtype = np.where(type2, 2, 1)
    rows = pd.DataFrame({
        "vehicle_id": tr["vehicle_id"].to_numpy()[keep],
        "t": t[keep],
        "lane_id": lane_arr[keep],
        "segment_id": tr["segment_id"].astype(str).to_numpy()[keep],
    })
    rows["stream_id"] = ""
    rows["variant"] = "simplified"
    for name in DRIVER_FIELDS:
        rows[name] = np.nan
    rows["type1"] = (dtype[keep] == 1).astype(float)
    rows["type2"] = (dtype[keep] == 2).astype(float)
    shape = np.array([lanes[l].shape for l in lane_arr[keep]])
    for s in LANE_SHAPES:
        rows[f"shape_{s}"] = (shape == s).astype(float)
    has_k = has[keep]
    sd = safe_distance(dtype[keep], speed[keep], lane_changing[keep])
    qt = queue_threshold(dtype[keep], speed[keep], lane_changing[keep])
    rows["is_leading"] = (~has_k).astype(float)
    rows["in_queue"] = (has_k & (np.where(has_k, gap[keep], np.inf) < qt)).astype(float)
    rows["heading"] = tr["heading"].to_numpy(dtype=float)[keep]
    rows["angle_to_front"] = np.where(has_k, lead["angle_to_front"].to_numpy(dtype=float)[keep], 0.0)
    rows["hdwy"] = np.where(has_k, gap[keep], NO_LEADER_HDWY)
    rows["safe_distance"] = sd
    rows["speed"] = speed[keep]
    rows["accel"] = accel[keep]
    rows["delta_v"] = np.where(has_k, dv[keep], 0.0)
    for k in INDICATORS:
        rows[f"{k}_prev"] = encode_indicator(k, ind[k][prev_idx[keep]])
        rows[f"{k}_now"] = encode_indicator(k, ind[k][keep])
    for h in horizons:
        for k in INDICATORS:
            rows[FusedTable.label(k, h)] = labels[(k, h)][keep].astype(np.int8)

    # driver features for rows of matched vehicles
    streams = list(streams)
    if streams:
        match = match or match_streams(streams, tr, radius, time_tol, origin)
        by_id = {s.stream_id: s for s in streams}
        row_groups = rows.groupby("vehicle_id", sort=False).indices
        for pair in match.pairs:
            ridx = row_groups.get(pair.vehicle_id)
            if ridx is None:
                continue
            stream = by_id[pair.stream_id]
            try:
                frames = stream_features(stream)
            except DegenerateCalibrationError as exc:
                log.warning("stream %s unusable: %s", pair.stream_id, exc)
                continue
            summary = _window_summary(frames, rows["t"].to_numpy()[ridx])
            ok = summary["ear"].notna().to_numpy()
            sel = ridx[ok]
            for name in DRIVER_FIELDS:
                rows.loc[sel, name] = summary[name].to_numpy()[ok]
            rows.loc[sel, "stream_id"] = pair.stream_id
            rows.loc[sel, "variant"] = "full"

    rows = rows.sort_values(["t", "vehicle_id"], kind="mergesort").reset_index(drop=True)
    return FusedTable(rows[list(table_columns(horizons))], horizons)


def table_columns(horizons: Sequence[int] = (1, 2)) -> tuple[str, ...]:
    base = [n for n in feature_names("full") if n not in HISTORY_FIELDS]
    hist = [f"{k}_{w}" for k in INDICATORS for w in ("prev", "now")]
    labels = [FusedTable.label(k, h) for h in horizons for k in INDICATORS]
    return tuple(FusedTable.META) + tuple(base) + tuple(hist) + tuple(labels)


def _empty_frame(horizons) -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=object if c in FusedTable.META and c != "t" else float)
                         for c in table_columns(horizons)})
