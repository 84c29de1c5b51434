"""Model training, prediction and segment scoring over a fused table."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError
from .fusion import FusedTable
from .learn import CvReport, GbdtModel, GbdtParams, cross_validate, smote, train
from .learn.gbdt import predict
from .risk import FuzzyEngine, level_index, LEVELS
from .tci import INDICATORS
from .trajectory import SegmentMap

log = logging.getLogger(__name__)

VARIANTS = ("full", "simplified")


def model_key(variant: str, kind: str, horizon: int) -> str:
    return f"{variant}_{kind}_{int(horizon)}s"


@dataclass
class ModelSet:
    """Trained models keyed by ``(variant, kind, horizon)``."""

    models: dict[tuple[str, str, int], GbdtModel] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.models)

    def get(self, variant: str, kind: str, horizon: int) -> GbdtModel | None:
        return self.models.get((variant, kind, int(horizon)))

    @property
    def horizons(self) -> tuple[int, ...]:
        return tuple(sorted({h for _, _, h in self.models}))

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for (variant, kind, h), model in sorted(self.models.items()):
            p = directory / f"{model_key(variant, kind, h)}.json"
            model.save(p)
            paths.append(p)
        return paths

    @classmethod
    def load(cls, directory) -> "ModelSet":
        directory = Path(directory)
        out = {}
        for p in sorted(directory.glob("*_*_*s.json")):
            variant, kind, h = p.stem.split("_")
            if variant in VARIANTS and kind in INDICATORS and h[:-1].isdigit():
                out[(variant, kind, int(h[:-1]))] = GbdtModel.load(p)
        if not out:
            raise SchemaError(f"no model files found in {directory}")
        return cls(out)


def temporal_split(table: FusedTable, horizon_guard: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks for the first and second half of the covered time span.

    Training rows whose label window reaches into the second half are
    dropped so the held-out half never leaks into training labels.
    """
    t = table.frame["t"].to_numpy(dtype=float)
    if t.size == 0:
        return np.zeros(0, bool), np.zeros(0, bool)
    mid = 0.5 * (t.min() + t.max())
    guard = max(table.horizons) if horizon_guard and table.horizons else 0.0
    return t + guard < mid, t >= mid


def _fit_one(ds, params: GbdtParams, rebalance: bool, k: int, seed: int) -> GbdtModel:
    if rebalance:
        ds = smote(ds, k=k, seed=seed)
    return train(ds, params)


def train_models(table: FusedTable, params: GbdtParams | None = None, rows=None,
                 kinds: Sequence[str] = INDICATORS, horizons: Sequence[int] | None = None,
                 variants: Sequence[str] = VARIANTS, rebalance: bool = True, k: int = 5,
                 seed: int = 0) -> ModelSet:
    """One model per (variant, indicator, horizon).

    Full models learn from matched rows only; simplified models from every
    selected row, since their inputs are observable for all vehicles.
    """
    params = params or GbdtParams()
    horizons = tuple(horizons or table.horizons)
    out = {}
    for variant in variants:
        for kind in kinds:
            for h in horizons:
                ds = table.dataset(kind, h, variant, rows)
                log.info("training %s on %d rows (%d positive)", model_key(variant, kind, h),
                         len(ds), int(ds.y.sum()))
                out[(variant, kind, h)] = _fit_one(ds, params, rebalance, k, seed)
    return ModelSet(out)


def cross_validate_table(table: FusedTable, params: GbdtParams | None = None, rows=None,
                         kinds: Sequence[str] = INDICATORS, horizons: Sequence[int] | None = None,
                         variants: Sequence[str] = ("full",), rebalance: bool = False, folds: int = 10,
                         k: int = 5, seed: int = 0) -> dict[str, CvReport]:
    horizons = tuple(horizons or table.horizons)
    reports = {}
    for variant in variants:
        for kind in kinds:
            for h in horizons:
                ds = table.dataset(kind, h, variant, rows)
                reports[model_key(variant, kind, h)] = cross_validate(
                    ds, params, folds=folds, rebalance=rebalance, seed=seed, k=k)
    return reports


def predict_table(models: ModelSet, table: FusedTable, rows=None,
                  simplified_only: bool = False) -> pd.DataFrame:
    """Per-row predicted flags ``pred_<kind>_<h>s`` plus the variant actually used.

    Full-variant rows go to the full model when one exists; every other row
    (and every row under ``simplified_only``) goes to the simplified model.
    """
    df = table.frame
    mask = np.ones(len(df), bool) if rows is None else np.asarray(rows, bool)
    sub = df[mask].reset_index(drop=True)
    out = sub[list(FusedTable.META)].copy()
    route_full = (sub["variant"] == "full").to_numpy() & (not simplified_only)
    used = np.where(route_full, "full", "simplified").astype(object)
    for kind in INDICATORS:
        for h in models.horizons:
            full_m = models.get("full", kind, h)
            simp_m = models.get("simplified", kind, h)
            flags = np.zeros(len(sub), dtype=np.int8)
            probs = np.full(len(sub), np.nan)
            to_full = route_full if full_m is not None else np.zeros(len(sub), bool)
            to_simp = ~to_full
            if to_simp.any() and simp_m is None:
                if full_m is None:
                    continue
                raise SchemaError(f"no simplified model for {kind} {h}s but unmatched rows need one")
            for model, sel, variant in ((full_m, to_full, "full"), (simp_m, to_simp, "simplified")):
                if model is None or not sel.any():
                    continue
                pick = np.zeros(len(df), bool)
                pick[np.flatnonzero(mask)[sel]] = True
                X = table.matrix(kind, variant, pick)
                p, f = predict(model, X)
                probs[sel] = p
                flags[sel] = f
            used[to_simp] = "simplified"
            out[f"prob_{kind}_{h}s"] = probs
            out[f"pred_{kind}_{h}s"] = flags
            out[FusedTable.label(kind, h)] = sub[FusedTable.label(kind, h)].to_numpy()
    out["model_variant"] = used
    return out


def score_columns(horizons: Sequence[int]) -> list[str]:
    cols = ["segment_id", "t"]
    for h in horizons:
        cols += [f"actual_{h}s", f"predicted_{h}s"]
    for h in horizons:
        cols += [f"level_actual_{h}s", f"level_predicted_{h}s"]
    return cols


def score_segments(predictions: pd.DataFrame, segments: SegmentMap | Mapping[str, float],
                   horizons: Sequence[int] = (1, 2), engine: FuzzyEngine | None = None) -> pd.DataFrame:
    """Per (segment, timestamp) risk: the worst vehicle score among vehicles present.

    Vehicle scores come from the fuzzy engine fed with the segment's crash
    count and the three flags, realised (actual) or predicted.
    """
    crashes = dict(segments.historical_crashes) if isinstance(segments, SegmentMap) else dict(segments)
    horizons = tuple(int(h) for h in horizons)
    cols = score_columns(horizons)
    if len(predictions) == 0:
        return pd.DataFrame({c: pd.Series(dtype=object if c == "segment_id" else float) for c in cols})
    engine = engine or FuzzyEngine()
    seg = predictions["segment_id"].astype(str).to_numpy()
    missing = sorted(set(seg) - set(crashes))
    if missing:
        raise SchemaError(f"segments without crash counts: {missing}")
    c = np.array([crashes[s] for s in seg], dtype=float)
    veh = pd.DataFrame({"segment_id": seg, "t": predictions["t"].to_numpy(dtype=float)})
    for h in horizons:
        for src, prefix in (("actual", ""), ("predicted", "pred_")):
            flags = np.column_stack([predictions[f"{prefix}{k}_{h}s"].to_numpy() for k in INDICATORS])
            veh[f"{src}_{h}s"] = engine.score_many(c, flags)
    agg = veh.groupby(["segment_id", "t"], sort=True).max().reset_index()
    for h in horizons:
        for src in ("actual", "predicted"):
            agg[f"level_{src}_{h}s"] = np.array(LEVELS, dtype=object)[level_index(agg[f"{src}_{h}s"])]
    return agg[cols]


def level_accuracy(scores: pd.DataFrame, horizon: int) -> float:
    """Share of (segment, timestamp) cells whose predicted five-level bin equals the actual one."""
    if len(scores) == 0:
        return float("nan")
    a = level_index(scores[f"actual_{horizon}s"])
    p = level_index(scores[f"predicted_{horizon}s"])
    return float(np.mean(a == p))


def level_confusion(scores: pd.DataFrame, horizon: int) -> np.ndarray:
    """5x5 counts, rows actual level, columns predicted level."""
    a = level_index(scores[f"actual_{horizon}s"])
    p = level_index(scores[f"predicted_{horizon}s"])
    m = np.zeros((len(LEVELS), len(LEVELS)), dtype=np.int64)
    np.add.at(m, (a, p), 1)
    return m


def write_scores(scores: pd.DataFrame, path) -> None:
    scores.to_csv(path, index=False, lineterminator="\n", float_format="%.4f")
