"""Stratified k-fold cross-validation with optional SMOTE on training folds."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support
from sklearn.model_selection import StratifiedKFold

from ..errors import InsufficientDataError
from .dataset import Dataset
from .gbdt import GbdtParams, predict, train
from .smote import smote

METRICS = ("accuracy", "precision", "recall", "f1")


@dataclass
class FoldResult:
    fold: int
    train_size: int  # after rebalancing
    valid_size: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: tuple[int, int, int, int]  # tn, fp, fn, tp
    valid_rows: np.ndarray = field(repr=False)
    smote_inputs: np.ndarray = field(repr=False)  # row ids that fed the oversampler


@dataclass
class CvReport:
    folds: list[FoldResult]
    rebalance: bool

    def mean(self, metric: str) -> float:
        return float(np.mean([getattr(f, metric) for f in self.folds]))

    @property
    def means(self) -> dict[str, float]:
        return {m: self.mean(m) for m in METRICS}

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return tuple(int(v) for v in np.sum([f.confusion for f in self.folds], axis=0))


def scores(y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    """Accuracy plus macro precision/recall/F1 and the confusion counts."""
    p, r, f, _ = precision_recall_fscore_support(y_true, y_pred, labels=[0, 1],
                                                 average="macro", zero_division=0)
    tn, fp, fn, tp = confusion_matrix(y_true, y_pred, labels=[0, 1]).ravel()
    return {"accuracy": float(accuracy_score(y_true, y_pred)), "precision": float(p),
            "recall": float(r), "f1": float(f), "confusion": (int(tn), int(fp), int(fn), int(tp))}


def cross_validate(data: Dataset, params: GbdtParams | None = None, folds: int = 10,
                   rebalance: bool = False, seed: int = 0, k: int = 5) -> CvReport:
    if len(data) < folds:
        raise InsufficientDataError(f"{len(data)} rows cannot fill {folds} folds")
    params = params or GbdtParams()
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    results = []
    for i, (tr, va) in enumerate(splitter.split(data.X, data.y)):
        train_set = data.subset(tr)
        valid_set = data.subset(va)
        smote_inputs = np.zeros(0, dtype=np.int64)
        if rebalance:
            smote_inputs = train_set.row_id.copy()
            train_set = smote(train_set, k=k, seed=seed + i)
        model = train(train_set, params)
        _, flag = predict(model, valid_set)
        s = scores(valid_set.y, flag.astype(np.int8))
        results.append(FoldResult(i, len(train_set), len(valid_set), s["accuracy"], s["precision"],
                                  s["recall"], s["f1"], s["confusion"], valid_set.row_id.copy(),
                                  smote_inputs))
    return CvReport(results, rebalance)


def format_table(reports: dict[str, CvReport]) -> str:
    """Plain-text table of mean metrics, one line per named report."""
    width = max((len(name) for name in reports), default=5)
    lines = [f"{'model':<{width}}  " + "  ".join(f"{m:>9}" for m in METRICS)]
    for name, rep in reports.items():
        lines.append(f"{name:<{width}}  " + "  ".join(f"{rep.mean(m):9.4f}" for m in METRICS))
    return "\n".join(lines)
