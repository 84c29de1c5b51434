"""Pipeline configuration: one YAML tree, unknown keys rejected."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .learn import GbdtParams
from .risk import FuzzyParams
from .sim.traffic import SITE_ORIGIN, ScenarioConfig, default_lanes, default_segments
from .tci import Thresholds
from .trajectory import LaneShape, SegmentMap


@dataclass(frozen=True)
class Paths:
    out: str = "out"
    tracks: str = "tracks.jsonl"
    faces: str = "faces.jsonl.gz"
    calibration: str = "calibration.jsonl"
    site: str = "site.json"
    fused: str = "fused.csv"
    models: str = "models"
    predictions: str = "predictions.csv"
    scores: str = "scores.csv"
    report: str = "report.txt"

    def resolve(self, name: str, base: Path | None = None) -> Path:
        """Relative paths sit under ``out`` (itself relative to ``base``)."""
        p = Path(getattr(self, name))
        if p.is_absolute():
            return p
        out = Path(self.out)
        if base is not None and not out.is_absolute():
            out = base / out
        return out / p


@dataclass(frozen=True)
class FusionSettings:
    sample_period: float = 0.5
    radius: float = 5.0
    time_tol: float = 0.5


@dataclass(frozen=True)
class TrainSettings:
    split: str = "temporal"  # or "none"
    rebalance: bool = False
    smote_k: int = 5
    cv_folds: int = 10
    cv_rebalance: bool = False
    simplified: bool = True


@dataclass(frozen=True)
class HeatmapSettings:
    window: float = 60.0
    cell_time: float | None = None  # None: the latest timestamp in the score file


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    horizons: tuple[int, ...] = (1, 2)
    paths: Paths = field(default_factory=Paths)
    thresholds: Thresholds = field(default_factory=Thresholds)
    gbdt: GbdtParams = field(default_factory=GbdtParams)
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    heatmap: HeatmapSettings = field(default_factory=HeatmapSettings)
    base: Path | None = None  # directory of the config file; relative paths resolve against it

    def path(self, name: str) -> Path:
        return self.paths.resolve(name, self.base)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, seed=int(seed), scenario=self.scenario.with_(seed=int(seed)))


def _check_keys(section: str, data: Mapping, allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(map(str, unknown))}")


def _simple(cls, section: str, data: Mapping | None):
    data = dict(data or {})
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(section, data, names)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


SCENARIO_KEYS = ("seed", "duration", "vehicles", "mix", "timestep", "lanes", "segments", "warmup",
                 "braking_rate", "braking_decel", "braking_duration", "lane_changes", "app_fraction",
                 "face_rate", "gps_noise", "origin")


def _scenario(data: Mapping | None, seed: int) -> ScenarioConfig:
    data = dict(data or {})
    _check_keys("scenario", data, SCENARIO_KEYS)
    kw: dict[str, Any] = {"seed": int(data.pop("seed", seed))}
    try:
        if "mix" in data:
            mix = data.pop("mix")
            if not isinstance(mix, Mapping):
                raise ConfigError("scenario.mix must map behavior to fraction")
            kw["mix"] = tuple(sorted((str(k), float(v)) for k, v in mix.items()))
        if "lanes" in data:
            kw["lanes"] = tuple(LaneShape(str(l["lane_id"]), l["shape"], float(l["speed_limit"]), float(l["length"]))
                                for l in data.pop("lanes"))
        if "segments" in data:
            kw["segments"] = SegmentMap.from_dict(data.pop("segments"))
        elif "lanes" in kw:
            kw["segments"] = default_segments(kw["lanes"])
        for k in ("braking_decel", "braking_duration", "origin"):
            if k in data:
                kw[k] = tuple(float(v) for v in data.pop(k))
        kw.update(data)
        return ScenarioConfig(**kw)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from None


TOP_KEYS = ("seed", "horizons", "paths", "thresholds", "gbdt", "fuzzy", "scenario", "fusion", "train", "heatmap")


def from_dict(data: Mapping | None, base: Path | None = None) -> PipelineConfig:
    data = dict(data or {})
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", data, TOP_KEYS)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    horizons = tuple(data.get("horizons", (1, 2)))
    if not horizons or any(h not in (1, 2) for h in horizons) or len(set(horizons)) != len(horizons):
        raise ConfigError("horizons must be a non-empty subset of [1, 2]")
    gbdt = dict(data.get("gbdt") or {})
    _check_keys("gbdt", gbdt, [f.name for f in dataclasses.fields(GbdtParams)])
    fuzzy = dict(data.get("fuzzy") or {})
    _check_keys("fuzzy", fuzzy, [f.name for f in dataclasses.fields(FuzzyParams)])
    try:
        gbdt_p = GbdtParams.from_dict(gbdt)
        fuzzy_p = FuzzyParams.from_dict(fuzzy)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"gbdt/fuzzy: {exc}") from None
    train = _simple(TrainSettings, "train", data.get("train"))
    if train.split not in ("temporal", "none"):
        raise ConfigError("train.split must be 'temporal' or 'none'")
    if train.cv_folds < 0 or train.cv_folds == 1:
        raise ConfigError("train.cv_folds must be 0 (off) or at least 2")
    fusion = _simple(FusionSettings, "fusion", data.get("fusion"))
    if fusion.sample_period <= 0 or fusion.radius <= 0 or fusion.time_tol < 0:
        raise ConfigError("fusion settings must be positive")
    heat = _simple(HeatmapSettings, "heatmap", data.get("heatmap"))
    if heat.window <= 0:
        raise ConfigError("heatmap.window must be positive")
    return PipelineConfig(
        seed=seed, horizons=tuple(int(h) for h in sorted(horizons)),
        paths=_simple(Paths, "paths", data.get("paths")),
        thresholds=_simple(Thresholds, "thresholds", data.get("thresholds")),
        gbdt=gbdt_p, fuzzy=fuzzy_p,
        scenario=_scenario(data.get("scenario"), seed),
        fusion=fusion, train=train, heatmap=heat, base=base)


def load(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return from_dict(data, base=path.parent)


def default_config() -> PipelineConfig:
    return PipelineConfig(scenario=ScenarioConfig(lanes=default_lanes(), origin=SITE_ORIGIN))
