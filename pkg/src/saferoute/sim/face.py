"""Synthetic in-vehicle face streams rendered from a driver script."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..driver import AU_COLUMNS, EMOTION_AUS, FaceFrame
from .behavior import OFF_ROAD_GAZE, DriverProfile, DriverScript, make_script

EARTH_RADIUS = 6_371_000.0  # m

OPEN_EAR = (0.29, 0.34)
CLOSED_EAR = 0.08
CLOSED_MAR = (0.005, 0.02)
OPEN_MAR = (0.25, 0.40)
EYE_WIDTH = 0.06
MOUTH_WIDTH = 0.10


@dataclass
class FaceStream:
    """Column-oriented face frames of one app stream."""

    stream_id: str
    t: np.ndarray
    landmarks: np.ndarray  # (n, 68, 2)
    head_pose: np.ndarray  # (n, 2)
    eye_gaze: np.ndarray  # (n, 2)
    aus: np.ndarray  # (n, len(au_numbers))
    gps: np.ndarray  # (n, 2) lon, lat
    speed: np.ndarray
    au_numbers: tuple[int, ...] = AU_COLUMNS
    calibration: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    road_reference: tuple[float, float] = (0.0, 0.0)

    def __len__(self) -> int:
        return self.t.size

    def frames(self):
        for i in range(len(self)):
            yield FaceFrame(float(self.t[i]), self.landmarks[i], tuple(self.head_pose[i]),
                            tuple(self.eye_gaze[i]), dict(zip(self.au_numbers, self.aus[i])),
                            tuple(self.gps[i]), float(self.speed[i]), self.stream_id)

    @classmethod
    def from_frames(cls, stream_id: str, frames, au_numbers=AU_COLUMNS, calibration=None,
                    road_reference=(0.0, 0.0)) -> "FaceStream":
        frames = sorted(frames, key=lambda f: f.t)
        n = len(frames)
        return cls(
            stream_id,
            np.array([f.t for f in frames], dtype=float),
            np.array([f.landmarks for f in frames], dtype=float).reshape(n, 68, 2),
            np.array([f.head_pose for f in frames], dtype=float).reshape(n, 2),
            np.array([f.eye_gaze for f in frames], dtype=float).reshape(n, 2),
            np.array([[f.aus.get(u, 0.0) for u in au_numbers] for f in frames], dtype=float).reshape(n, len(au_numbers)),
            np.array([f.gps for f in frames], dtype=float).reshape(n, 2),
            np.array([f.speed for f in frames], dtype=float),
            tuple(au_numbers),
            np.zeros((0, 2)) if calibration is None else np.asarray(calibration, dtype=float).reshape(-1, 2),
            tuple(road_reference),
        )


def _template() -> np.ndarray:
    """Neutral 68-point face in normalised image coordinates (y grows downward)."""
    pts = np.zeros((68, 2))
    a = np.linspace(np.pi * 0.95, np.pi * 0.05, 17)
    pts[0:17] = np.c_[0.5 - 0.22 * np.cos(a), 0.45 + 0.35 * np.sin(a)]
    pts[17:22] = np.c_[np.linspace(0.33, 0.46, 5), 0.34 - 0.02 * np.sin(np.linspace(0, np.pi, 5))]
    pts[22:27] = np.c_[np.linspace(0.54, 0.67, 5), 0.34 - 0.02 * np.sin(np.linspace(0, np.pi, 5))]
    pts[27:31] = np.c_[np.full(4, 0.5), np.linspace(0.40, 0.55, 4)]
    pts[31:36] = np.c_[np.linspace(0.45, 0.55, 5), np.full(5, 0.58)]
    pts[48:60] = np.c_[0.5 + 0.07 * np.cos(np.linspace(np.pi, -np.pi, 12, endpoint=False)),
                       0.70 + 0.035 * np.sin(np.linspace(np.pi, -np.pi, 12, endpoint=False))]
    return pts


TEMPLATE = _template()


def _eye(cx: float, cy: float, ear_value: np.ndarray) -> np.ndarray:
    """Six eye points with EAR equal to ``ear_value`` (height/width)."""
    w = EYE_WIDTH
    h = ear_value * w
    n = ear_value.size
    out = np.empty((n, 6, 2))
    xs = np.array([-w / 2, -w / 6, w / 6, w / 2, w / 6, -w / 6]) + cx
    out[:, :, 0] = xs
    out[:, :, 1] = cy
    out[:, 1, 1] -= h / 2
    out[:, 2, 1] -= h / 2
    out[:, 4, 1] += h / 2
    out[:, 5, 1] += h / 2
    return out


def _mouth(mar_value: np.ndarray) -> np.ndarray:
    """Inner lip 60-67 with MAR equal to ``mar_value`` (gap/width)."""
    w = MOUTH_WIDTH
    gap = mar_value * w
    n = mar_value.size
    cx, cy = 0.5, 0.70
    out = np.empty((n, 8, 2))
    xs = np.array([-w / 2, -w / 4, 0.0, w / 4, w / 2, w / 4, 0.0, -w / 4]) + cx
    out[:, :, 0] = xs
    out[:, :, 1] = cy
    out[:, 1:4, 1] -= gap[:, None] / 2
    out[:, 5:8, 1] += gap[:, None] / 2
    return out


def render_landmarks(ear_value: np.ndarray, mar_value: np.ndarray, roll: np.ndarray,
                     shift: np.ndarray) -> np.ndarray:
    """Full 68-point sets with the requested eye/mouth ratios under a rigid in-plane motion."""
    n = ear_value.size
    lm = np.repeat(TEMPLATE[None], n, axis=0)
    lm[:, 36:42] = _eye(0.40, 0.42, ear_value)
    lm[:, 42:48] = _eye(0.60, 0.42, ear_value)
    lm[:, 60:68] = _mouth(mar_value)
    c, s = np.cos(roll), np.sin(roll)
    centered = lm - 0.5
    rot = np.stack([c[:, None] * centered[..., 0] - s[:, None] * centered[..., 1],
                    s[:, None] * centered[..., 0] + c[:, None] * centered[..., 1]], axis=-1)
    return rot + 0.5 + shift[:, None, :]


def au_activations(emotions: np.ndarray, rng: np.random.Generator,
                   au_numbers=AU_COLUMNS) -> np.ndarray:
    """AU levels: the emotion's prototype units strongly active, everything else faint."""
    n = len(emotions)
    out = rng.uniform(0.0, 0.3, size=(n, len(au_numbers)))
    col = {u: i for i, u in enumerate(au_numbers)}
    for emotion, units in EMOTION_AUS.items():
        rows = np.flatnonzero(emotions == emotion)
        for u in units:
            out[rows, col[u]] = rng.uniform(0.65, 0.95, size=rows.size)
    return out


def to_gps(x, y, origin) -> np.ndarray:
    """Local planar metres to (lon, lat) degrees by equirectangular projection."""
    lon0, lat0 = origin
    lat = lat0 + np.degrees(np.asarray(y, dtype=float) / EARTH_RADIUS)
    lon = lon0 + np.degrees(np.asarray(x, dtype=float) / (EARTH_RADIUS * math.cos(math.radians(lat0))))
    return np.c_[lon, lat]


def from_gps(gps, origin) -> np.ndarray:
    lon0, lat0 = origin
    gps = np.asarray(gps, dtype=float).reshape(-1, 2)
    x = np.radians(gps[:, 0] - lon0) * EARTH_RADIUS * math.cos(math.radians(lat0))
    y = np.radians(gps[:, 1] - lat0) * EARTH_RADIUS
    return np.c_[x, y]


def calibration_points(rng: np.random.Generator, per_target: int = 12, spread: float = 0.04) -> np.ndarray:
    """Focus-angle samples around straight ahead and the two off-road regions."""
    centers = np.vstack([[0.0, 0.0], OFF_ROAD_GAZE])
    pts = [c + rng.normal(0.0, spread, size=(per_target, 2)) for c in centers]
    return np.vstack(pts)


def render_stream(stream_id: str, script: DriverScript, t: np.ndarray, rng: np.random.Generator,
                  xy: np.ndarray | None = None, speed: np.ndarray | None = None,
                  origin=(0.0, 0.0), gps_noise: float = 0.5) -> FaceStream:
    """Render frames at times ``t`` from ``script``; ``xy``/``speed`` give the vehicle's true motion."""
    n = t.size
    base_ear = rng.uniform(*OPEN_EAR)
    ear_v = np.clip(base_ear + rng.normal(0.0, 0.004, n), OPEN_EAR[0] - 0.01, None)
    ear_v = np.where(script.blinking(t), CLOSED_EAR, ear_v)
    mar_v = np.where(script.mouth_open(t), rng.uniform(*OPEN_MAR, size=n), rng.uniform(*CLOSED_MAR, size=n))

    focus = rng.normal(0.0, 0.04, size=(n, 2))
    di = script.distraction_index(t)
    away = di >= 0
    if away.any():
        focus[away] += script.distraction_targets[di[away]]
    head = 0.6 * focus + rng.normal(0.0, 0.01, size=(n, 2))
    gaze = focus - head

    roll = rng.normal(0.0, 0.03, size=n)
    shift = 0.05 * head
    landmarks = render_landmarks(ear_v, mar_v, roll, shift)
    aus = au_activations(np.atleast_1d(script.emotion_at(t)), rng)

    if xy is None:
        xy = np.zeros((n, 2))
    noisy = xy + rng.normal(0.0, gps_noise, size=(n, 2)) if gps_noise > 0 else xy
    gps = to_gps(noisy[:, 0], noisy[:, 1], origin)
    spd = np.zeros(n) if speed is None else np.maximum(speed + rng.normal(0.0, 0.2, n), 0.0)
    return FaceStream(stream_id, t, landmarks, head, gaze, aus, gps, spd,
                      calibration=calibration_points(rng))


def generate_driver_stream(profile: DriverProfile, duration: float, seed: int = 0, rate: float = 10.0,
                           emotion: str | None = None, stream_id: str = "driver") -> FaceStream:
    """Stand-alone face stream for one driver over ``[0, duration)``.

    ``emotion`` pins the emotion process to a single state.
    """
    rng = np.random.default_rng(seed)
    script = make_script(profile, 0.0, duration, rng, pinned_emotion=emotion)
    t = np.round(np.arange(0.0, duration, 1.0 / rate), 6)
    return render_stream(stream_id, script, t, rng, gps_noise=0.0)


def scenario_streams(result, seed_offset: int = 1) -> list[FaceStream]:
    """Face streams for every trip of every app-equipped vehicle in a simulation result."""
    cfg = result.config
    tracks = result.tracks
    root = np.random.SeedSequence([cfg.seed, seed_offset])
    vehicles = {veh.index: veh for veh in result.vehicles}
    streams = []
    trips = result.trips[result.trips["has_app"]].sort_values("trip_id")
    rngs = root.spawn(len(trips))
    by_trip = tracks.groupby("vehicle_id", sort=False).indices
    step = 1.0 / cfg.face_rate
    for (_, trip), ss in zip(trips.iterrows(), rngs):
        rng = np.random.default_rng(ss)
        rows = by_trip[trip["trip_id"]]
        tt = tracks["t"].to_numpy()[rows]
        k0 = math.ceil(tt[0] / step - 1e-9)
        k1 = math.floor(tt[-1] / step + 1e-9)
        t = np.round(np.arange(k0, k1 + 1) * step, 6)
        if t.size == 0:
            continue
        x = np.interp(t, tt, tracks["x"].to_numpy()[rows])
        y = np.interp(t, tt, tracks["y"].to_numpy()[rows])
        sp = np.interp(t, tt, tracks["speed"].to_numpy()[rows])
        veh = vehicles[int(trip["vehicle"])]
        sid = "app-" + trip["trip_id"]
        streams.append(render_stream(sid, veh.script, t, rng, np.c_[x, y], sp, cfg.origin, cfg.gps_noise))
    return streams
