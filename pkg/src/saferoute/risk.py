"""Fuzzy risk scoring of vehicles and road segments.

Historical crash frequency (low/medium/high) and three crisp conflict flags
drive a Mamdani rule base of 3 x 8 rules whose output is defuzzified by
centroid onto a 0-100 risk score.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .errors import DomainError

LEVELS = ("very_small", "small", "medium", "large", "very_large")
COLOR_NAMES = ("green", "blue", "yellow", "orange", "red")
COLOR_HEX = {"green": "#008000", "blue": "#0000ff", "yellow": "#ffff00",
             "orange": "#ffa500", "red": "#ff0000"}
CRASH_LEVELS = ("low", "medium", "high")
OUTPUT_TERMS = ("small", "medium", "large")


@dataclass(frozen=True)
class FuzzyParams:
    # piecewise-linear crash memberships as (breakpoints, values)
    low: tuple = ((0.0, 5.0, 6.5), (1.0, 1.0, 0.0))
    medium: tuple = ((5.0, 6.5, 9.5, 11.0), (0.0, 1.0, 1.0, 0.0))
    high: tuple = ((9.5, 11.0), (0.0, 1.0))
    # output triangles (left, peak, right) on the 0-100 scale
    small: tuple = (0.0, 10.0, 40.0)
    medium_out: tuple = (30.0, 50.0, 70.0)
    large: tuple = (60.0, 90.0, 100.0)
    resolution: int = 10001

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzyParams":
        def freeze(v):
            return tuple(freeze(x) for x in v) if isinstance(v, (list, tuple)) else v
        return cls(**{k: freeze(v) for k, v in d.items()})


@dataclass(frozen=True)
class FuzzyInput:
    crashes_per_year: float
    flags: tuple[bool, bool, bool]

    def __post_init__(self):
        if self.crashes_per_year < 0:
            raise DomainError("crashes_per_year must be non-negative")


@dataclass(frozen=True)
class RiskScore:
    score: float
    level: str
    color: str


def _trapezoid(x, spec):
    xs, ys = spec
    return np.interp(x, xs, ys, left=ys[0], right=ys[-1])


def _triangle(z, tri):
    a, b, c = tri
    return np.interp(z, (a, b, c), (0.0, 1.0, 0.0), left=0.0, right=0.0)


def fuzzify_crashes(crashes_per_year: float, params: FuzzyParams = FuzzyParams()) -> tuple[float, float, float]:
    """Memberships of a crash frequency in the (low, medium, high) sets."""
    if crashes_per_year < 0:
        raise DomainError("crashes_per_year must be non-negative")
    x = float(crashes_per_year)
    return (float(_trapezoid(x, params.low)), float(_trapezoid(x, params.medium)),
            float(_trapezoid(x, params.high)))


def consequent(crash_level: str, n_conflicts: int) -> str:
    """Rule table: two or more conflicts escalate; medium/high crash history escalates."""
    elevated = crash_level in ("medium", "high")
    if elevated and n_conflicts >= 2:
        return "large"
    if not elevated and n_conflicts <= 1:
        return "small"
    return "medium"


def rule_base() -> list[tuple[str, tuple[bool, bool, bool], str]]:
    """All 24 rules as ``(crash_level, flag_pattern, output_term)``."""
    return [(lvl, pat, consequent(lvl, sum(pat)))
            for lvl in CRASH_LEVELS
            for pat in itertools.product((False, True), repeat=3)]


class FuzzyEngine:
    """Mamdani inference with min implication and centroid defuzzification.

    Rules sharing an output term combine by bounded sum so that adjacent
    crash levels with the same consequent hand over without a dip; distinct
    terms aggregate by max.
    """

    def __init__(self, params: FuzzyParams = FuzzyParams()):
        self.params = params
        self.z = np.linspace(0.0, 100.0, params.resolution)
        self.terms = {"small": _triangle(self.z, params.small),
                      "medium": _triangle(self.z, params.medium_out),
                      "large": _triangle(self.z, params.large)}
        self.rules = rule_base()

    def strengths(self, inp: FuzzyInput) -> dict[str, float]:
        mu = dict(zip(CRASH_LEVELS, fuzzify_crashes(inp.crashes_per_year, self.params)))
        pattern = tuple(bool(f) for f in inp.flags)
        out = {term: 0.0 for term in OUTPUT_TERMS}
        for lvl, pat, term in self.rules:
            # crisp flags: a rule either matches the pattern (1) or not (0)
            w = min(mu[lvl], 1.0 if pat == pattern else 0.0)
            out[term] = min(1.0, out[term] + w)
        return out

    def aggregate(self, inp: FuzzyInput) -> np.ndarray:
        w = self.strengths(inp)
        agg = np.zeros_like(self.z)
        for term, mf in self.terms.items():
            agg = np.maximum(agg, np.minimum(w[term], mf))
        return agg

    def centroid(self, membership: np.ndarray) -> float:
        area = trapezoid(membership, self.z)
        if area <= 0:
            return 0.0
        return float(trapezoid(membership * self.z, self.z) / area)

    def infer(self, inp: FuzzyInput) -> RiskScore:
        score = self.centroid(self.aggregate(inp))
        level, color = bin_level(score)
        return RiskScore(score, level, color)

    def score_table(self, crashes: Iterable[float]) -> dict[tuple[float, int], float]:
        """Memoised scores keyed by ``(crashes, flag bitmask)``."""
        out = {}
        for c in crashes:
            for mask in range(8):
                flags = tuple(bool(mask >> i & 1) for i in range(3))
                out[(float(c), mask)] = self.infer(FuzzyInput(float(c), flags)).score
        return out

    def score_many(self, crashes: np.ndarray, flags: np.ndarray) -> np.ndarray:
        """Scores for arrays of crash counts and ``(n, 3)`` boolean flags."""
        crashes = np.asarray(crashes, dtype=float)
        flags = np.asarray(flags, dtype=bool)
        mask = flags[:, 0] * 1 + flags[:, 1] * 2 + flags[:, 2] * 4
        table = self.score_table(np.unique(crashes))
        return np.array([table[(float(c), int(m))] for c, m in zip(crashes, mask)])


_DEFAULT_ENGINE: FuzzyEngine | None = None


def default_engine() -> FuzzyEngine:
    global _DEFAULT_ENGINE
    if _DEFAULT_ENGINE is None:
        _DEFAULT_ENGINE = FuzzyEngine()
    return _DEFAULT_ENGINE


def infer_risk(inp: FuzzyInput, engine: FuzzyEngine | None = None) -> RiskScore:
    return (engine or default_engine()).infer(inp)


def segment_risk(scores: Iterable[float]) -> float:
    """Segment score is the worst vehicle score; an empty segment scores 0."""
    return max(scores, default=0.0)


def bin_level(score: float) -> tuple[str, str]:
    if not 0.0 <= score <= 100.0:
        raise DomainError(f"risk score {score} outside [0, 100]")
    i = min(int(score // 20.0), 4)
    return LEVELS[i], COLOR_NAMES[i]


def level_index(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if np.any((s < 0) | (s > 100)):
        raise DomainError("risk scores must lie in [0, 100]")
    return np.minimum((s // 20.0).astype(int), 4)


def window_average(series: Sequence[tuple[float, float]] | pd.DataFrame, window: float = 60.0,
                   value: str = "score") -> list[tuple[float, float]] | pd.DataFrame:
    """Tumbling-window means anchored at multiples of ``window``.

    A list of ``(t, score)`` pairs gives a list of ``(window_start, mean)``;
    a frame with ``segment_id``, ``t`` and ``value`` columns gives a frame
    with one row per segment and window.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if isinstance(series, pd.DataFrame):
        df = series.assign(window_start=np.floor(series["t"] / window) * window)
        return (df.groupby(["segment_id", "window_start"], sort=True)[value]
                .mean().reset_index())
    buckets: dict[float, list[float]] = {}
    for t, v in series:
        buckets.setdefault(float(np.floor(t / window) * window), []).append(float(v))
    return [(k, float(np.mean(vs))) for k, vs in sorted(buckets.items())]
