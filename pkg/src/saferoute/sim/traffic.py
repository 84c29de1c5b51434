"""Car-following microsimulation on closed lanes.

Every lane is a ring of its configured length so traffic density stays
constant; each pass over the lane is exported as a separate trip
(``v07-03`` = vehicle 7, fourth pass) whose longitudinal position runs over
``[0, length)``, exactly like vehicles crossing a camera's field of view.

Longitudinal control is the Intelligent Driver Model evaluated on the state
the driver perceived one reaction time ago. Injected hard-braking events
create near misses; an emergency-braking layer and a final no-overlap guard
keep the simulation collision free.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import pandas as pd

from ..errors import ConfigError
from ..trajectory import FRAME_PERIOD, LaneShape, SegmentMap, assign_segments
from .behavior import BEHAVIORS, PROFILES, DriverProfile, DriverScript, make_script

log = logging.getLogger(__name__)

VEHICLE_LENGTH = 4.5  # m
LANE_WIDTH = 3.5  # m
MIN_NET_GAP = 0.1  # m, hard floor enforced by the overlap guard
MAX_DECEL = 9.0  # m/s^2, physical braking limit
EMERGENCY_NEED = 5.0  # m/s^2, required deceleration that triggers emergency braking
SITE_ORIGIN = (-77.4360, 37.5407)  # lon, lat of local planar origin


def default_lanes() -> tuple[LaneShape, ...]:
    return (LaneShape("L1", "left_turn", 13.41, 300.0),
            LaneShape("L2", "straight", 15.65, 300.0),
            LaneShape("L3", "right_turn", 13.41, 300.0))


DEFAULT_CRASHES = (2.0, 8.0, 3.0, 12.0, 4.0, 7.0, 1.0)


def default_segments(lanes=None, crashes=DEFAULT_CRASHES) -> SegmentMap:
    """Seven equal longitudinal segments spanning all lanes."""
    lanes = lanes or default_lanes()
    length = min(l.length for l in lanes)
    n = len(crashes)
    items = [{"id": f"S{i + 1}", "lanes": [l.lane_id for l in lanes],
              "start": length * i / n, "end": length * (i + 1) / n if i < n - 1 else max(l.length for l in lanes),
              "crashes_per_year": c} for i, c in enumerate(crashes)]
    return SegmentMap.from_dict(items)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 600.0
    vehicles: int = 50
    mix: tuple[tuple[str, float], ...] = (("aggressive", 0.4), ("defensive", 0.2), ("normal", 0.4))
    timestep: float = FRAME_PERIOD
    lanes: tuple[LaneShape, ...] = field(default_factory=default_lanes)
    segments: SegmentMap = field(default_factory=default_segments)
    warmup: float = 30.0
    braking_rate: float = 5.0  # injected hard-braking events per vehicle per minute
    braking_decel: tuple[float, float] = (5.0, 9.0)
    braking_duration: tuple[float, float] = (0.5, 1.5)
    lane_changes: bool = True
    app_fraction: float = 0.3
    face_rate: float = 10.0  # Hz
    gps_noise: float = 0.5  # m
    origin: tuple[float, float] = SITE_ORIGIN
    profiles: Mapping[str, DriverProfile] | None = None

    def __post_init__(self):
        mix = dict(self.mix)
        if set(mix) - set(BEHAVIORS):
            raise ConfigError(f"unknown behaviors in mix: {sorted(set(mix) - set(BEHAVIORS))}")
        if any(v < 0 for v in mix.values()) or not math.isclose(sum(mix.values()), 1.0, abs_tol=1e-9):
            raise ConfigError(f"behavior fractions must be non-negative and sum to 1, got {sum(mix.values())}")
        if self.timestep <= 0:
            raise ConfigError("timestep must be positive")
        if self.duration <= 0 or self.vehicles < 0 or self.warmup < 0:
            raise ConfigError("duration must be positive; vehicles and warmup non-negative")
        if not self.lanes:
            raise ConfigError("at least one lane is required")
        if not 0.0 <= self.app_fraction <= 1.0:
            raise ConfigError("app_fraction must lie in [0, 1]")
        if self.face_rate <= 0:
            raise ConfigError("face_rate must be positive")
        ratio = FRAME_PERIOD / self.timestep
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("timestep must divide the 0.05 s frame period")

    @property
    def profile_table(self) -> Mapping[str, DriverProfile]:
        return self.profiles or PROFILES

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


@dataclass
class SimVehicle:
    index: int
    behavior: str
    profile: DriverProfile
    has_app: bool
    script: DriverScript


@dataclass
class SimResult:
    config: ScenarioConfig
    tracks: pd.DataFrame  # one row per trip per frame
    vehicles: list[SimVehicle]
    trips: pd.DataFrame  # trip_id, vehicle index, behavior, has_app, t_start, t_end
    interventions: pd.DataFrame  # t, trip_id, behavior, kind ("emergency" or "overlap_guard")
    skipped: list[int] = field(default_factory=list)

    def trip_behavior(self) -> dict[str, str]:
        return dict(zip(self.trips["trip_id"], self.trips["behavior"]))


def allocate_counts(n: int, mix: Mapping[str, float]) -> dict[str, int]:
    """Largest-remainder apportionment of ``n`` vehicles to behaviors."""
    names = sorted(mix)
    quotas = {k: n * mix[k] for k in names}
    counts = {k: int(math.floor(q)) for k, q in quotas.items()}
    rest = n - sum(counts.values())
    for k in sorted(names, key=lambda k: (-(quotas[k] - counts[k]), names.index(k)))[:rest]:
        counts[k] += 1
    return counts


def _idm(v, v0, gap_net, dv, has_leader, p_T, p_a, p_b, p_s0):
    free = 1.0 - (v / v0) ** 4
    s_star = p_s0 + np.maximum(0.0, v * p_T + v * dv / (2.0 * np.sqrt(p_a * p_b)))
    inter = np.where(has_leader, (s_star / np.maximum(gap_net, 0.01)) ** 2, 0.0)
    return np.maximum(p_a * (free - inter), -MAX_DECEL)


def _leaders(s, lane, n_lanes, length):
    """Ring leader (index or -1) and raw front-bumper gap for every vehicle."""
    n = s.size
    leader = np.full(n, -1)
    gap = np.full(n, np.inf)
    order = np.lexsort((np.arange(n), s, lane))
    ll = lane[order]
    for k in range(n_lanes):
        idx = order[ll == k]
        if idx.size < 2:
            continue
        nxt = np.roll(idx, -1)
        leader[idx] = nxt
        gap[idx] = np.mod(s[nxt] - s[idx], length[k])
    return leader, gap


def generate_scenario(config: ScenarioConfig = ScenarioConfig()) -> SimResult:
    """Run the scenario; deterministic given ``config`` (including its seed)."""
    root = np.random.SeedSequence(config.seed)
    scene_rng = np.random.default_rng(root.spawn(1)[0])
    counts = allocate_counts(config.vehicles, dict(config.mix))
    behaviors = [b for b in sorted(counts) for _ in range(counts[b])]
    scene_rng.shuffle(behaviors)
    n_app = int(round(config.app_fraction * config.vehicles))
    has_app = np.zeros(config.vehicles, dtype=bool)
    if n_app:
        has_app[scene_rng.choice(config.vehicles, size=n_app, replace=False)] = True

    lanes = config.lanes
    n_lanes = len(lanes)
    lane_len = np.array([l.length for l in lanes])
    limits = np.array([l.speed_limit for l in lanes])
    dt = config.timestep
    t_start = -config.warmup
    t_end = config.duration

    # spawn: round-robin over lanes, evenly spaced with jitter
    min_spacing = VEHICLE_LENGTH + 3.0 + 5.0
    lane_of = [i % n_lanes for i in range(config.vehicles)]
    per_lane = {k: [i for i in range(config.vehicles) if lane_of[i] == k] for k in range(n_lanes)}
    skipped: list[int] = []
    for k, ids in per_lane.items():
        cap = int(lane_len[k] // min_spacing)
        if len(ids) > cap:
            for i in ids[cap:]:
                log.warning("no safe insertion gap for vehicle %d on lane %s; skipped", i, lanes[k].lane_id)
                skipped.append(i)
            per_lane[k] = ids[:cap]

    veh_rngs = [np.random.default_rng(s) for s in root.spawn(config.vehicles + 1)[1:]]
    vehicles: list[SimVehicle] = []
    s0_list, lane0 = [], []
    for k, ids in per_lane.items():
        spacing = lane_len[k] / max(len(ids), 1)
        offset = scene_rng.uniform(0, spacing)
        for j, i in enumerate(ids):
            jitter = scene_rng.uniform(-0.2, 0.2) * (spacing - min_spacing) if spacing > min_spacing else 0.0
            s0_list.append((offset + j * spacing + jitter) % lane_len[k])
            lane0.append(k)
    active = [i for k in range(n_lanes) for i in per_lane[k]]
    for i in active:
        prof = config.profile_table[behaviors[i]]
        script = make_script(prof, t_start, t_end, veh_rngs[i])
        vehicles.append(SimVehicle(i, behaviors[i], prof, bool(has_app[i]), script))
    n = len(vehicles)

    s = np.array(s0_list, dtype=float)
    lane = np.array(lane0, dtype=np.int64)
    factor = np.array([v.profile.speed_factor for v in vehicles])
    p_T = np.array([v.profile.headway for v in vehicles])
    p_a = np.array([v.profile.max_accel for v in vehicles])
    p_b = np.array([v.profile.comfort_decel for v in vehicles])
    p_s0 = np.array([v.profile.min_gap for v in vehicles])
    p_lc = np.array([v.profile.lane_change_rate for v in vehicles]) / 60.0
    base_rt = np.array([v.profile.reaction_time for v in vehicles])
    accept = np.array([v.profile.accept_headway for v in vehicles])
    v = 0.8 * factor * limits[lane]
    acc = np.zeros(n)
    lap = np.zeros(n, dtype=np.int64)
    rngs = [veh_rngs[veh.index] for veh in vehicles]

    steps = int(round((t_end - t_start) / dt))
    grid = t_start + np.arange(steps) * dt
    # per-step schedules: injected braking decel (NaN = none), distraction episode index
    brake = np.full((n, steps), np.nan)
    distract = np.full((n, steps), -1, dtype=np.int64)
    attempts: dict[int, list[tuple[int, float]]] = {}
    for i, (veh, r) in enumerate(zip(vehicles, rngs)):
        if config.braking_rate > 0:
            t = t_start
            while True:
                t += r.exponential(60.0 / config.braking_rate)
                if t >= t_end:
                    break
                dur = r.uniform(*config.braking_duration)
                decel = r.uniform(*config.braking_decel)
                brake[i, (grid >= t) & (grid < t + dur)] = decel
                t += dur
        distract[i] = veh.script.distraction_index(grid)
        if config.lane_changes and p_lc[i] > 0:
            t = t_start
            while True:
                t += r.exponential(1.0 / p_lc[i])
                if t >= t_end:
                    break
                attempts.setdefault(int((t - t_start) / dt), []).append((i, r.random()))

    max_delay = int(math.ceil(3.0 / dt)) + 1
    cmd_hist = np.zeros((max_delay, n))
    frozen = np.full(n, np.nan)
    last_change = np.full(n, -np.inf)
    prev_distract = np.full(n, -1, dtype=np.int64)

    record_every = int(round(FRAME_PERIOD / dt))
    warm_steps = int(round(config.warmup / dt))
    sec_grid = np.arange(t_start, t_end + 1.0, 1.0)
    perf_grid = (np.array([veh.script.performance_at(sec_grid) for veh in vehicles])
                 if n else np.zeros((0, sec_grid.size)))
    rows = np.arange(n)

    rec_t, rec_i, rec_s, rec_lane, rec_v, rec_a, rec_lap = [], [], [], [], [], [], []
    interventions = []

    for k in range(steps + 1):
        t = t_start + k * dt
        if k >= warm_steps and (k - warm_steps) % record_every == 0:
            rec_t.append(np.full(n, round(t, 6)))
            rec_i.append(np.arange(n))
            rec_s.append(s.copy())
            rec_lane.append(lane.copy())
            rec_v.append(v.copy())
            rec_a.append(acc.copy())
            rec_lap.append(lap.copy())
        if k == steps or n == 0:
            break

        leader, gap = _leaders(s, lane, n_lanes, lane_len)
        has = leader >= 0
        li = np.where(has, leader, 0)
        gap_net = gap - VEHICLE_LENGTH
        dv = np.where(has, v - v[li], 0.0)
        v0 = factor * limits[lane]
        cmd_now = _idm(v, v0, gap_net, dv, has, p_T, p_a, p_b, p_s0)
        cmd_hist[k % max_delay] = cmd_now

        # reaction delay grows as emotional performance drops
        sec = min(int(t - t_start), perf_grid.shape[1] - 1)
        delay = base_rt + 0.8 * (1.0 - perf_grid[:, sec])
        d_steps = np.minimum(np.round(delay / dt).astype(np.int64), max_delay - 1)
        d_steps = np.minimum(d_steps, k)
        cmd = cmd_hist[(k - d_steps) % max_delay, rows]

        # distraction freezes the pedal: the command from the episode start (never
        # more than a gentle throttle) is held regardless of what happens ahead
        dist = distract[:, k]
        frozen = np.where((dist >= 0) & (dist != prev_distract), np.minimum(cmd, 0.3), frozen)
        cmd = np.where(dist >= 0, frozen, cmd)
        prev_distract = dist

        # injected hard braking
        ev = brake[:, k]
        cmd = np.where(np.isnan(ev), cmd, -ev)

        # emergency braking when the deceleration needed to stay behind the leader is high
        room = np.maximum(gap_net - 1.0, 0.05)
        v_l = v[li]
        b_l = np.maximum(-acc[li], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            stop_l = np.where(b_l > 0.5, v_l * v_l / (2.0 * b_l), np.inf)
            need_stop = v * v / (2.0 * np.maximum(room + stop_l, 0.05))
            need_rel = np.where(dv > 0, dv * dv / (2.0 * room), 0.0)
        need = np.where(has, np.where(b_l > 0.5, need_stop, need_rel), 0.0)
        emergency = has & (need > EMERGENCY_NEED) & (cmd > -need)
        if emergency.any():
            cmd = np.where(emergency, -np.minimum(need * 1.3, MAX_DECEL), cmd)
            for i in np.flatnonzero(emergency):
                interventions.append((t, i, lap[i], "emergency"))
        cmd = np.clip(cmd, -MAX_DECEL, p_a)

        # ballistic update with a stop at zero speed
        v_new = v + cmd * dt
        stops = v_new < 0
        disp = np.where(stops, np.where(cmd < 0, v * v / (-2.0 * np.where(cmd < 0, cmd, -1.0)), 0.0),
                        (v + v_new) * 0.5 * dt)
        v_new = np.maximum(v_new, 0.0)

        # overlap guard: never let a follower pass the leader's rear bumper
        for _ in range(3):
            allowed = np.where(has, gap + disp[li] - VEHICLE_LENGTH - MIN_NET_GAP, np.inf)
            bad = disp > allowed
            if not bad.any():
                break
            for i in np.flatnonzero(bad):
                interventions.append((t, i, lap[i], "overlap_guard"))
            disp = np.where(bad, np.maximum(allowed, 0.0), disp)
            v_new = np.where(bad, np.minimum(v_new, v_new[li]), v_new)

        acc = (v_new - v) / dt
        v = v_new
        s = s + disp
        wrapped = s >= lane_len[lane]
        s = np.where(wrapped, s - lane_len[lane], s)
        lap = lap + wrapped

        for i, coin in attempts.get(k, ()):
            if t - last_change[i] < 5.0:
                continue
            choices = [x for x in (lane[i] - 1, lane[i] + 1) if 0 <= x < n_lanes]
            if not choices:
                continue
            target = choices[int(coin * len(choices))]
            if lane_len[target] != lane_len[lane[i]]:
                continue
            others = np.flatnonzero((lane == target) & (np.arange(n) != i))
            ahead = np.mod(s[others] - s[i], lane_len[target])
            behind = np.mod(s[i] - s[others], lane_len[target])
            ok = True
            if others.size:
                j_a = others[np.argmin(ahead)]
                j_b = others[np.argmin(behind)]
                ok = (ahead.min() - VEHICLE_LENGTH > max(3.0, v[i] * accept[i])
                      and behind.min() - VEHICLE_LENGTH > max(3.0, v[j_b] * accept[i])
                      and (not has[i] or v[j_a] >= v[li[i]] or gap[i] < ahead.min()))
            if ok:
                lane[i] = target
                last_change[i] = t

    if rec_t:
        idx = np.concatenate(rec_i)
        laps = np.concatenate(rec_lap)
        vidx = np.array([veh.index for veh in vehicles])[idx]
        lane_idx = np.concatenate(rec_lane)
        s_all = np.concatenate(rec_s)
        tracks = pd.DataFrame({
            "vehicle_id": [f"v{a:02d}-{b:02d}" for a, b in zip(vidx, laps)],
            "t": np.concatenate(rec_t),
            "s": s_all,
            "lane_id": np.array([l.lane_id for l in lanes], dtype=object)[lane_idx],
            "heading": 0.0,
            "speed": np.concatenate(rec_v),
            "accel": np.concatenate(rec_a),
            "x": s_all,
            "y": lane_idx * LANE_WIDTH,
        })
        tracks["segment_id"] = assign_segments(config.segments, tracks["lane_id"].to_numpy(), s_all)
        tracks = tracks.sort_values(["vehicle_id", "t"], kind="mergesort").reset_index(drop=True)
    else:
        tracks = pd.DataFrame(columns=["vehicle_id", "t", "s", "lane_id", "heading", "speed", "accel",
                                       "x", "y", "segment_id"])

    beh = {veh.index: veh.behavior for veh in vehicles}
    app = {veh.index: veh.has_app for veh in vehicles}
    g = tracks.groupby("vehicle_id", sort=True)["t"].agg(["min", "max"]).reset_index()
    trips = pd.DataFrame({
        "trip_id": g["vehicle_id"],
        "vehicle": [int(x[1:].split("-")[0]) for x in g["vehicle_id"]],
        "t_start": g["min"], "t_end": g["max"],
    })
    trips["behavior"] = [beh[i] for i in trips["vehicle"]]
    trips["has_app"] = [app[i] for i in trips["vehicle"]]
    vid_of = np.array([veh.index for veh in vehicles])
    inter = pd.DataFrame(
        [(round(t, 6), f"v{vid_of[i]:02d}-{lp:02d}", vehicles[i].behavior, kind)
         for t, i, lp, kind in interventions if t >= 0],
        columns=["t", "trip_id", "behavior", "kind"])
    return SimResult(config, tracks, vehicles, trips, inter, skipped)
