"""Driver-state features from in-vehicle face observations.

Landmarks follow the common 68-point annotation (0-based): right eye 36-41,
left eye 42-47, inner lip 60-67. Functions taking landmark arrays broadcast
over any leading batch dimensions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateCalibrationError, DegenerateLandmarkError

EAR_THRESHOLD = 0.26
MAR_THRESHOLD = 0.05

RIGHT_EYE = slice(36, 42)
LEFT_EYE = slice(42, 48)
INNER_LIP = slice(60, 68)

EMOTIONS = ("happiness", "sadness", "surprise", "fear", "anger", "calm")

# Valence/arousal centres per emotion.
VA_TABLE = {
    "happiness": (0.23, 0.31),
    "sadness": (-0.18, -0.26),
    "surprise": (0.37, 0.08),
    "fear": (0.21, -0.24),
    "anger": (0.36, -0.30),
    "calm": (-0.09, -0.11),
}

# AU prototypes; happiness and sadness as documented, the rest from standard FACS prototypes.
EMOTION_AUS = {
    "happiness": (6, 12),
    "sadness": (1, 4, 15),
    "surprise": (1, 2, 5, 26),
    "fear": (1, 4, 5, 20),
    "anger": (4, 5, 7, 23),
}
AU_ACTIVE = 0.5

# Sweet points of driving performance on the VA plane: traffic violations,
# lane deviation and brake reaction time.
SWEET_POINTS = np.array([(0.0, 0.2), (0.0, 0.1), (0.2, 0.2)])
PERFORMANCE_SIGMA = 0.25

SPEEDING_MARGIN = 8 * 0.44704  # 8 mph in m/s
MAX_ACCEL = 5.0
MAX_DECEL = 3.0


@dataclass(frozen=True)
class FaceFrame:
    t: float
    landmarks: np.ndarray  # (68, 2) normalised image coordinates
    head_pose: tuple[float, float]
    eye_gaze: tuple[float, float]
    aus: Mapping[int, float] = field(default_factory=dict)
    gps: tuple[float, float] = (0.0, 0.0)
    speed: float = 0.0
    stream_id: str = ""

    def __post_init__(self):
        lm = np.asarray(self.landmarks, dtype=float)
        if lm.shape != (68, 2):
            raise ValueError(f"expected 68 landmarks, got shape {lm.shape}")
        object.__setattr__(self, "landmarks", lm)
        aus = normalise_aus(self.aus)
        if any(not 0.0 <= v <= 1.0 for v in aus.values()):
            raise ValueError("AU activations must lie in [0, 1]")
        object.__setattr__(self, "aus", aus)


@dataclass(frozen=True)
class DriverFeatures:
    ear: float
    mar: float
    eyes_closed: bool
    mouth_open: bool
    focus: tuple[float, float]
    gaze_cluster: int
    on_road: bool
    emotion: str
    va: tuple[float, float]
    performance: float
    driver_type: int = 1


@dataclass(frozen=True)
class GazeModel:
    centroids: np.ndarray  # (3, 2)
    road_cluster: int


def normalise_aus(aus: Mapping) -> dict[int, float]:
    """Map keys such as ``"AU06"``, ``"AU6_r"`` or ``6`` to integer AU numbers."""
    out = {}
    for key, val in aus.items():
        if isinstance(key, (int, np.integer)):
            num = int(key)
        else:
            m = re.search(r"(\d+)", str(key))
            if m is None:
                raise ValueError(f"cannot parse action unit key {key!r}")
            num = int(m.group(1))
        out[num] = float(val)
    return out


def focus_angles(head_pose, eye_gaze):
    """Focus direction = head pose + eye gaze. Positive x looks left, positive y looks up."""
    hp = np.asarray(head_pose, dtype=float)
    eg = np.asarray(eye_gaze, dtype=float)
    out = hp + eg
    return tuple(float(v) for v in out) if out.ndim == 1 else out


def _dist(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)


def eye_aspect_ratio(eye) -> float | np.ndarray:
    """EAR of one eye from its six landmarks ``p1..p6`` (shape ``(..., 6, 2)``)."""
    eye = np.asarray(eye, dtype=float)
    width = _dist(eye[..., 3, :], eye[..., 0, :])
    if np.any(width < 1e-12):
        raise DegenerateLandmarkError("eye corners p1 and p4 coincide")
    ratio = (_dist(eye[..., 1, :], eye[..., 5, :]) + _dist(eye[..., 2, :], eye[..., 4, :])) / (2.0 * width)
    return float(ratio) if np.ndim(ratio) == 0 else ratio


def ear(landmarks) -> float | np.ndarray:
    """Mean EAR over both eyes of a 68-point landmark set (shape ``(..., 68, 2)``)."""
    lm = np.asarray(landmarks, dtype=float)
    val = 0.5 * (np.asarray(eye_aspect_ratio(lm[..., RIGHT_EYE, :]))
                 + np.asarray(eye_aspect_ratio(lm[..., LEFT_EYE, :])))
    return float(val) if val.ndim == 0 else val


def mar(mouth) -> float | np.ndarray:
    """Mouth aspect ratio from the eight inner-lip landmarks (60-67).

    Mean of the two inner-lip vertical gaps (61-67, 63-65) over the corner-to-corner width (60-64).
    """
    m = np.asarray(mouth, dtype=float)
    if m.shape[-2] == 68:
        m = m[..., INNER_LIP, :]
    width = _dist(m[..., 0, :], m[..., 4, :])
    if np.any(width < 1e-12):
        raise DegenerateLandmarkError("mouth corners coincide")
    ratio = (_dist(m[..., 1, :], m[..., 7, :]) + _dist(m[..., 3, :], m[..., 5, :])) / (2.0 * width)
    return float(ratio) if np.ndim(ratio) == 0 else ratio


def eyes_closed(ear_value):
    return np.asarray(ear_value) < EAR_THRESHOLD if np.ndim(ear_value) else bool(ear_value < EAR_THRESHOLD)


def mouth_open(mar_value):
    return np.asarray(mar_value) > MAR_THRESHOLD if np.ndim(mar_value) else bool(mar_value > MAR_THRESHOLD)


def fit_gaze_model(points, road_reference) -> GazeModel:
    """Cluster calibration focus points into three gaze regions.

    Seeding is deterministic: the point nearest ``road_reference`` first,
    then farthest-point selection for the other two.
    """
    from sklearn.cluster import KMeans

    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ref = np.asarray(road_reference, dtype=float)
    if len(np.unique(pts, axis=0)) < 3:
        raise DegenerateCalibrationError("calibration needs at least 3 distinct focus points")
    if len(pts) < 30:
        raise DegenerateCalibrationError(f"calibration needs at least 30 points, got {len(pts)}")
    seeds = [int(np.argmin(_dist(pts, ref)))]
    mind = _dist(pts, pts[seeds[0]])
    for _ in range(2):
        nxt = int(np.argmax(mind))
        seeds.append(nxt)
        mind = np.minimum(mind, _dist(pts, pts[nxt]))
    km = KMeans(n_clusters=3, init=pts[seeds], n_init=1, max_iter=300, tol=0.0,
                algorithm="lloyd").fit(pts)
    centroids = km.cluster_centers_.copy()
    road = int(np.argmin(_dist(centroids, ref)))
    return GazeModel(centroids, road)


def assign_gaze(model: GazeModel, point):
    """Nearest-centroid cluster and whether it is the road-ahead cluster.

    Accepts one point or an ``(n, 2)`` array; exact ties go to the lowest index.
    """
    p = np.asarray(point, dtype=float)
    d = np.linalg.norm(p[..., None, :] - model.centroids, axis=-1)
    dmin = d.min(axis=-1, keepdims=True)
    cluster = np.argmax(d <= dmin * (1 + 1e-12) + 1e-15, axis=-1)
    on_road = cluster == model.road_cluster
    if p.ndim == 1:
        return int(cluster), bool(on_road)
    return cluster, on_road


def emotion_from_aus(aus: Mapping) -> str:
    """Emotion whose AU prototype is fully active (> 0.5); highest mean wins, else calm."""
    act = normalise_aus(aus)
    best, best_mean = "calm", -1.0
    for emotion, units in EMOTION_AUS.items():
        levels = [act.get(u, 0.0) for u in units]
        if all(v > AU_ACTIVE for v in levels):
            mean = sum(levels) / len(levels)
            if mean > best_mean:
                best, best_mean = emotion, mean
    return best


def va_of(emotion: str) -> tuple[float, float]:
    return VA_TABLE[emotion]


def _performance_raw(v, a, sweet=SWEET_POINTS, sigma=PERFORMANCE_SIGMA):
    v = np.asarray(v, dtype=float)[..., None]
    a = np.asarray(a, dtype=float)[..., None]
    d2 = (v - sweet[:, 0]) ** 2 + (a - sweet[:, 1]) ** 2
    return np.sum(np.exp(-d2 / (2 * sigma ** 2)) / (2 * np.pi * sigma ** 2), axis=-1)


@lru_cache(maxsize=None)
def performance_peak() -> tuple[float, float, float]:
    """Global maximiser of the summed sweet-point densities on [-1, 1]^2.

    Grid search at 0.001 resolution, then a local polish from the best cell.
    Returns ``(valence, arousal, raw_value)``.
    """
    from scipy.optimize import minimize

    grid = np.round(np.arange(-1000, 1001) * 0.001, 3)
    best = (-np.inf, 0.0, 0.0)
    for i in range(0, grid.size, 250):
        vv, aa = np.meshgrid(grid[i:i + 250], grid, indexing="ij")
        raw = _performance_raw(vv, aa)
        k = np.unravel_index(np.argmax(raw), raw.shape)
        if raw[k] > best[0]:
            best = (float(raw[k]), float(vv[k]), float(aa[k]))
    res = minimize(lambda x: -_performance_raw(x[0], x[1]), [best[1], best[2]],
                   method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
    if -res.fun > best[0] and np.all(np.abs(res.x) <= 1):
        return float(res.x[0]), float(res.x[1]), float(-res.fun)
    return best[1], best[2], best[0]


def performance_score(va) -> float | np.ndarray:
    """Emotion-driven performance in (0, 1]; 1 at the peak of the sweet-point mixture."""
    va = np.asarray(va, dtype=float)
    score = _performance_raw(va[..., 0], va[..., 1]) / performance_peak()[2]
    return float(score) if score.ndim == 0 else score


def classify_driver(speeds: Sequence[float], accels: Sequence[float], speed_limit: float) -> int:
    """Type 2 (aggressive) if speeding by more than 8 mph or accelerating/braking harder than 5/3 m/s^2."""
    speeds = np.asarray(speeds, dtype=float)
    accels = np.asarray(accels, dtype=float)
    if speeds.size == 0 or accels.size == 0:
        raise ValueError("classify_driver needs non-empty histories")
    if speeds.max() > speed_limit + SPEEDING_MARGIN or accels.max() > MAX_ACCEL or accels.min() < -MAX_DECEL:
        return 2
    return 1


def frame_features(frame: FaceFrame, gaze: GazeModel, driver_type: int = 1) -> DriverFeatures:
    e = ear(frame.landmarks)
    m = mar(frame.landmarks)
    focus = focus_angles(frame.head_pose, frame.eye_gaze)
    cluster, on_road = assign_gaze(gaze, focus)
    emotion = emotion_from_aus(frame.aus)
    va = va_of(emotion)
    return DriverFeatures(e, m, e < EAR_THRESHOLD, m > MAR_THRESHOLD, focus, cluster, on_road,
                          emotion, va, performance_score(va), driver_type)


AU_COLUMNS = tuple(sorted({u for units in EMOTION_AUS.values() for u in units}))


def emotions_from_au_matrix(au_matrix: np.ndarray, au_numbers: Sequence[int] = AU_COLUMNS) -> np.ndarray:
    """Vectorised :func:`emotion_from_aus` over an ``(n, len(au_numbers))`` activation matrix."""
    col = {u: i for i, u in enumerate(au_numbers)}
    n = au_matrix.shape[0]
    best = np.full(n, "calm", dtype=object)
    best_mean = np.full(n, -1.0)
    for emotion, units in EMOTION_AUS.items():
        levels = np.stack([au_matrix[:, col[u]] if u in col else np.zeros(n) for u in units], axis=1)
        match = np.all(levels > AU_ACTIVE, axis=1)
        mean = levels.sum(axis=1) / len(units)
        win = match & (mean > best_mean)
        best[win] = emotion
        best_mean[win] = mean[win]
    return best
