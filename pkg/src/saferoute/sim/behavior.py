"""Driver profiles and scripted driver-state timelines.

A :class:`DriverScript` fixes, for one simulated driver, when they blink,
when they look away from the road, when their mouth is open and which
emotion they are in. The traffic model reads it (reaction time, distraction)
and the face-stream generator renders it, so the two views agree.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..driver import EMOTIONS, performance_score, va_of

BEHAVIORS = ("aggressive", "normal", "defensive")
BLINK_DURATION = 0.15  # s


@dataclass(frozen=True)
class DriverProfile:
    behavior: str
    speed_factor: float  # desired speed / lane limit
    headway: float  # IDM time headway, s
    max_accel: float  # m/s^2
    comfort_decel: float  # m/s^2
    min_gap: float  # IDM standstill net gap, m
    lane_change_rate: float  # attempts per minute
    reaction_time: float  # base delay, s
    blink_rate: float  # Hz
    distraction_rate: float  # episodes per minute
    mouth_rate: float  # talking/yawning episodes per minute
    accept_headway: float = 1.0  # s; smallest time gap accepted when changing lanes
    emotion_weights: tuple[float, ...] = ()  # over EMOTIONS
    emotion_dwell: float = 20.0  # mean seconds per emotion

    def __post_init__(self):
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"unknown behavior {self.behavior!r}")
        if self.speed_factor not in (1.2, 1.0, 0.8):
            raise ValueError("desired speed factor must be 1.2, 1.0 or 0.8")


# weights follow EMOTIONS = (happiness, sadness, surprise, fear, anger, calm)
PROFILES = {
    "aggressive": DriverProfile("aggressive", 1.2, 0.9, 3.0, 2.5, 1.5, 3.0, 1.1, 0.30, 4.0, 1.0, 0.4,
                                (0.15, 0.05, 0.10, 0.05, 0.40, 0.25)),
    "normal": DriverProfile("normal", 1.0, 1.5, 1.5, 2.0, 2.0, 1.0, 0.9, 0.30, 2.5, 1.0, 1.0,
                            (0.25, 0.10, 0.05, 0.05, 0.10, 0.45)),
    "defensive": DriverProfile("defensive", 0.8, 2.2, 1.2, 1.5, 3.0, 0.2, 0.7, 0.25, 0.3, 0.5, 1.5,
                               (0.15, 0.10, 0.05, 0.10, 0.00, 0.60)),
}


@dataclass
class DriverScript:
    """Timeline of one driver's state over ``[t0, t1)``."""

    t0: float
    t1: float
    emotion_times: np.ndarray  # start time of each emotion spell
    emotions: list[str]
    blinks: np.ndarray  # blink start times
    distractions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (start, end)
    distraction_targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # focus angles
    mouth: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (start, end)

    def emotion_at(self, t) -> np.ndarray:
        i = np.searchsorted(self.emotion_times, np.asarray(t, dtype=float), side="right") - 1
        return np.asarray(self.emotions, dtype=object)[np.clip(i, 0, len(self.emotions) - 1)]

    def performance_at(self, t) -> np.ndarray:
        perf = {e: performance_score(va_of(e)) for e in EMOTIONS}
        return np.array([perf[e] for e in np.atleast_1d(self.emotion_at(t))])

    def blinking(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = np.searchsorted(self.blinks, t, side="right") - 1
        ok = i >= 0
        start = self.blinks[np.clip(i, 0, None)] if self.blinks.size else np.full(t.shape, -np.inf)
        return ok & (t < start + BLINK_DURATION) if self.blinks.size else np.zeros(t.shape, bool)

    @staticmethod
    def _inside(intervals: np.ndarray, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if intervals.size == 0:
            return np.full(t.shape, -1)
        i = np.searchsorted(intervals[:, 0], t, side="right") - 1
        inside = (i >= 0) & (t < intervals[np.clip(i, 0, None), 1])
        return np.where(inside, i, -1)

    def distraction_index(self, t) -> np.ndarray:
        """Index of the active distraction episode, or -1."""
        return self._inside(self.distractions, t)

    def distracted(self, t) -> np.ndarray:
        return self.distraction_index(t) >= 0

    def mouth_open(self, t) -> np.ndarray:
        return self._inside(self.mouth, t) >= 0


OFF_ROAD_GAZE = np.array([(0.5, 0.0), (-0.5, -0.3)])  # mirror / console focus angles


def _episodes(rng: np.random.Generator, rate_per_min: float, t0: float, t1: float,
              lo: float, hi: float) -> np.ndarray:
    if rate_per_min <= 0:
        return np.zeros((0, 2))
    out, t = [], t0
    while True:
        t += rng.exponential(60.0 / rate_per_min)
        if t >= t1:
            break
        dur = rng.uniform(lo, hi)
        out.append((t, min(t + dur, t1)))
        t += dur
    return np.array(out).reshape(-1, 2)


def quasi_regular(rng: np.random.Generator, rate: float, t0: float, t1: float, jitter: float = 0.2) -> np.ndarray:
    """Event times roughly every ``1/rate`` seconds with +-``jitter`` relative spacing noise."""
    if rate <= 0:
        return np.zeros(0)
    period = 1.0 / rate
    n = int(np.ceil((t1 - t0) * rate)) + 2
    gaps = period * rng.uniform(1 - jitter, 1 + jitter, size=n)
    times = t0 + rng.uniform(0, period) + np.concatenate([[0.0], np.cumsum(gaps[:-1])])
    return times[times < t1 - BLINK_DURATION]


def make_script(profile: DriverProfile, t0: float, t1: float, rng: np.random.Generator,
                pinned_emotion: str | None = None) -> DriverScript:
    if pinned_emotion is not None:
        times, emotions = np.array([t0]), [pinned_emotion]
    else:
        w = np.asarray(profile.emotion_weights, dtype=float)
        w = w / w.sum()
        times, emotions = [t0], [EMOTIONS[rng.choice(len(EMOTIONS), p=w)]]
        t = t0
        while True:
            t += max(3.0, rng.exponential(profile.emotion_dwell))
            if t >= t1:
                break
            # Markov step: never stay in the same emotion
            cur = EMOTIONS.index(emotions[-1])
            ww = w.copy()
            ww[cur] = 0.0
            if ww.sum() <= 0:
                continue
            times.append(t)
            emotions.append(EMOTIONS[rng.choice(len(EMOTIONS), p=ww / ww.sum())])
        times = np.array(times)
    blinks = quasi_regular(rng, profile.blink_rate, t0, t1)
    distractions = _episodes(rng, profile.distraction_rate, t0, t1, 1.0, 2.5)
    targets = OFF_ROAD_GAZE[rng.integers(0, len(OFF_ROAD_GAZE), size=len(distractions))]
    mouth = _episodes(rng, profile.mouth_rate, t0, t1, 1.0, 3.0)
    return DriverScript(t0, t1, times, emotions, blinks, distractions, targets.reshape(-1, 2), mouth)
