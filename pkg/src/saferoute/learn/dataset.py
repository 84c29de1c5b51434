from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

KINDS = ("continuous", "binary", "categorical")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "continuous"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"column {self.name}: unknown kind {self.kind!r}")


def schema_hash(columns) -> str:
    text = "|".join(f"{c.name}:{c.kind}" for c in columns)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class Dataset:
    """Feature matrix with binary labels and per-row provenance.

    Real rows carry their ``row_id`` and ``parent == neighbor == -1``;
    synthetic rows have ``row_id == -1`` and record the two rows they were
    interpolated from.
    """

    X: np.ndarray
    y: np.ndarray
    columns: tuple[Column, ...]
    row_id: np.ndarray | None = None
    parent: np.ndarray | None = None
    neighbor: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y).astype(np.int8)
        self.columns = tuple(self.columns)
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.X.shape[1] != len(self.columns):
            raise ValueError(f"X shape {self.X.shape} does not match {len(self.columns)} columns")
        if self.y.shape != (n,):
            raise ValueError("y must have one label per row")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature matrix contains missing or infinite values")
        if np.any((self.y != 0) & (self.y != 1)):
            raise ValueError("labels must be 0 or 1")
        if self.row_id is None:
            self.row_id = np.arange(n, dtype=np.int64)
        if self.parent is None:
            self.parent = np.full(n, -1, dtype=np.int64)
        if self.neighbor is None:
            self.neighbor = np.full(n, -1, dtype=np.int64)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def continuous(self) -> np.ndarray:
        return np.array([c.kind == "continuous" for c in self.columns], dtype=bool)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.columns)

    @property
    def synthetic(self) -> np.ndarray:
        return self.row_id < 0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.columns, self.row_id[idx],
                       self.parent[idx], self.neighbor[idx], dict(self.meta))

    def class_counts(self) -> tuple[int, int]:
        pos = int(self.y.sum())
        return len(self) - pos, pos
