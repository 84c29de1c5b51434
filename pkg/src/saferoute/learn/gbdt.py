"""Histogram gradient-boosted decision trees for binary classification.

Trees grow leaf-wise (best gain first) on per-feature gradient/hessian
histograms and minimise logistic loss with Newton leaf values. Training is
fully deterministic: split ties go to the lowest feature index, then the
lowest bin, and leaf ties to the earliest-created leaf.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import njit
from scipy.special import expit

from ..errors import DegenerateLabelsError, InsufficientDataError, SchemaError
from .dataset import Column, Dataset, schema_hash

FORMAT = "saferoute-gbdt"
FORMAT_VERSION = 1
GAIN_TIE = 1e-10  # relative


@dataclass(frozen=True)
class GbdtParams:
    trees: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_leaf_rows: int = 20
    bins: int = 255
    min_child_hessian: float = 1e-3

    def __post_init__(self):
        if self.trees < 0 or self.max_leaves < 2 or self.min_leaf_rows < 1:
            raise ValueError("trees >= 0, max_leaves >= 2 and min_leaf_rows >= 1 required")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 2 <= self.bins <= 65535:
            raise ValueError("bins must lie in [2, 65535]")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "GbdtParams":
        return cls(**(d or {}))


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray  # go left when x <= threshold
    threshold_bin: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # Newton leaf weight, before shrinkage
    gain: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def to_dict(self) -> dict:
        return {"feature": [int(v) for v in self.feature],
                "threshold": [float(v) for v in self.threshold],
                "threshold_bin": [int(v) for v in self.threshold_bin],
                "left": [int(v) for v in self.left],
                "right": [int(v) for v in self.right],
                "value": [float(v) for v in self.value],
                "gain": [float(v) for v in self.gain]}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int32), np.array(d["threshold"], dtype=np.float64),
                   np.array(d["threshold_bin"], dtype=np.int32), np.array(d["left"], dtype=np.int32),
                   np.array(d["right"], dtype=np.int32), np.array(d["value"], dtype=np.float64),
                   np.array(d["gain"], dtype=np.float64))


@dataclass
class GbdtModel:
    columns: tuple[Column, ...]
    base_score: float
    learning_rate: float
    bin_edges: list[np.ndarray]
    trees: list[Tree]
    params: GbdtParams
    history: list[float] = field(default_factory=list, compare=False)  # training logloss per tree

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def _packed(self):
        if not hasattr(self, "_pack"):
            sizes = [len(t.feature) for t in self.trees]
            offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
            cat = (lambda attr, dt: np.concatenate([getattr(t, attr) for t in self.trees]).astype(dt)
                   if self.trees else np.zeros(0, dt))
            self._pack = (cat("feature", np.int64), cat("threshold", np.float64),
                          cat("left", np.int64), cat("right", np.int64),
                          cat("value", np.float64), offsets)
        return self._pack

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.columns):
            raise SchemaError(f"expected {len(self.columns)} features, got {X.shape[1]}")
        feat, thr, left, right, value, offsets = self._packed()
        return _predict_raw(X, feat, thr, left, right, value, offsets,
                            float(self.base_score), float(self.learning_rate))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.predict_raw(X))

    def to_dict(self) -> dict:
        return {"format": FORMAT, "version": FORMAT_VERSION,
                "schema_hash": self.schema_hash,
                "columns": [{"name": c.name, "kind": c.kind} for c in self.columns],
                "params": asdict(self.params),
                "base_score": float(self.base_score),
                "learning_rate": float(self.learning_rate),
                "bin_edges": [[float(v) for v in e] for e in self.bin_edges],
                "trees": [t.to_dict() for t in self.trees]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format") != FORMAT or d.get("version") != FORMAT_VERSION:
            raise SchemaError(f"not a {FORMAT} v{FORMAT_VERSION} document")
        columns = tuple(Column(c["name"], c["kind"]) for c in d["columns"])
        if schema_hash(columns) != d["schema_hash"]:
            raise SchemaError("schema hash does not match column list")
        return cls(columns, float(d["base_score"]), float(d["learning_rate"]),
                   [np.array(e, dtype=np.float64) for e in d["bin_edges"]],
                   [Tree.from_dict(t) for t in d["trees"]], GbdtParams(**d["params"]))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "GbdtModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@njit(cache=True)
def _predict_raw(X, feat, thr, left, right, value, offsets, base, lr):
    n = X.shape[0]
    out = np.empty(n)
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        r = base
        for k in range(n_trees):
            o = offsets[k]
            node = o
            while feat[node] >= 0:
                if X[i, feat[node]] <= thr[node]:
                    node = o + left[node]
                else:
                    node = o + right[node]
            r += lr * value[node]
        out[i] = r
    return out


@njit(cache=True)
def _histogram(codes, idx, g, h, n_bins):
    n_feat = codes.shape[1]
    hist = np.zeros((n_feat, n_bins, 3))
    for i in range(idx.shape[0]):
        r = idx[i]
        gi = g[r]
        hi = h[r]
        for f in range(n_feat):
            b = codes[r, f]
            hist[f, b, 0] += gi
            hist[f, b, 1] += hi
            hist[f, b, 2] += 1.0
    return hist


def bin_edges(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Split points between distinct values; quantile-spaced when there are too many."""
    u, counts = np.unique(np.asarray(x, dtype=np.float64), return_counts=True)
    if u.size <= 1:
        return np.zeros(0)
    if u.size <= max_bins:
        lo, hi = u[:-1], u[1:]
    else:
        cum = np.cumsum(counts)
        targets = cum[-1] * np.arange(1, max_bins) / max_bins
        pos = np.unique(np.clip(np.searchsorted(cum, targets), 0, u.size - 2))
        lo, hi = u[pos], u[pos + 1]
    mid = lo + (hi - lo) / 2.0
    mid = np.where(mid >= hi, lo, mid)  # adjacent floats
    return np.unique(mid)


def bin_codes(X: np.ndarray, edges: Sequence[np.ndarray]) -> np.ndarray:
    dtype = np.uint8 if max((len(e) for e in edges), default=0) < 256 else np.uint16
    codes = np.empty(X.shape, dtype=dtype)
    for j, e in enumerate(edges):
        codes[:, j] = np.searchsorted(e, X[:, j], side="left")
    return codes


@njit(cache=True)
def _best_split_kernel(hist, n_bins, min_rows, min_hess):
    best_gain = -np.inf
    best_f = -1
    best_b = -1
    for f in range(hist.shape[0]):
        G = 0.0
        H = 0.0
        N = 0.0
        for b in range(n_bins[f]):
            G += hist[f, b, 0]
            H += hist[f, b, 1]
            N += hist[f, b, 2]
        parent = G * G / H if H > 0 else 0.0
        gl = 0.0
        hl = 0.0
        nl = 0.0
        for b in range(n_bins[f] - 1):
            gl += hist[f, b, 0]
            hl += hist[f, b, 1]
            nl += hist[f, b, 2]
            gr = G - gl
            hr = H - hl
            nr = N - nl
            if nl < min_rows or nr < min_rows or hl < min_hess or hr < min_hess:
                continue
            gain = gl * gl / hl + gr * gr / hr - parent
            # earlier feature/bin keeps ties, including ties blurred by summation order
            if best_f < 0 or gain > best_gain + GAIN_TIE * max(1.0, abs(best_gain)):
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


def _best_split(hist: np.ndarray, n_bins: np.ndarray, params: GbdtParams):
    """Best ``(gain, feature, bin)`` for one leaf, or None.

    A split is admissible when both children keep ``min_leaf_rows`` rows and
    ``min_child_hessian`` hessian mass.
    """
    gain, f, b = _best_split_kernel(hist, n_bins, float(params.min_leaf_rows),
                                    float(params.min_child_hessian))
    if f < 0:
        return None
    return float(gain), int(f), int(b)


def _grow_tree(codes, g, h, edges, n_bins, params: GbdtParams):
    n_bin_max = int(n_bins.max())
    feature, tbin, left, right, value, gain = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        tbin.append(-1)
        left.append(-1)
        right.append(-1)
        gain.append(0.0)
        G, H = g[idx].sum(), h[idx].sum()
        value.append(float(-G / H) if H > 0 else 0.0)
        return len(feature) - 1

    def candidate(idx, hist):
        best = _best_split(hist, n_bins, params)
        if best is None:
            return None
        gval, f, b = best
        tol = 1e-12 * (1.0 + h[idx].sum())
        if gval > tol:
            return (gval, f, b)
        # zero-gain split on a node with mixed gradients (e.g. XOR roots)
        gi = g[idx]
        if gval >= -tol and gi.max() - gi.min() > 1e-9:
            return (-1.0, f, b)
        return None

    all_idx = np.arange(codes.shape[0], dtype=np.int64)
    root = new_node(all_idx)
    root_hist = _histogram(codes, all_idx, g, h, n_bin_max)
    leaves = {root: (all_idx, root_hist, candidate(all_idx, root_hist))}
    n_leaves = 1
    while n_leaves < params.max_leaves:
        pick, best = None, None
        for node_id, (_, _, cand) in leaves.items():
            if cand is not None and (best is None or cand[0] > best[0]):
                pick, best = node_id, cand
        if pick is None:
            break
        idx, hist, (gval, f, b) = leaves.pop(pick)
        go_left = codes[idx, f] <= b
        li, ri = idx[go_left], idx[~go_left]
        small, large = (li, ri) if li.size <= ri.size else (ri, li)
        h_small = _histogram(codes, small, g, h, n_bin_max)
        h_large = hist - h_small
        hl, hr = (h_small, h_large) if small is li else (h_large, h_small)
        lnode, rnode = new_node(li), new_node(ri)
        feature[pick], tbin[pick] = f, b
        left[pick], right[pick] = lnode, rnode
        gain[pick] = max(gval, 0.0)
        value[pick] = 0.0
        leaves[lnode] = (li, hl, candidate(li, hl))
        leaves[rnode] = (ri, hr, candidate(ri, hr))
        n_leaves += 1
    threshold = [float(edges[f][b]) if f >= 0 else 0.0 for f, b in zip(feature, tbin)]
    tree = Tree(np.array(feature, dtype=np.int32), np.array(threshold), np.array(tbin, dtype=np.int32),
                np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                np.array(value), np.array(gain))
    return tree, {node: item[0] for node, item in leaves.items()}


def logloss(y: np.ndarray, raw: np.ndarray) -> float:
    # log(1 + exp(-z)) for y=1, log(1 + exp(z)) for y=0
    z = np.where(y == 1, raw, -raw)
    return float(np.mean(np.logaddexp(0.0, -z)))


def train(data: Dataset, params: GbdtParams | None = None) -> GbdtModel:
    """Fit a boosted ensemble on ``data``."""
    params = params or GbdtParams()
    n = len(data)
    if n < 2 * params.min_leaf_rows:
        raise InsufficientDataError(f"need at least {2 * params.min_leaf_rows} rows, got {n}")
    y = data.y.astype(np.float64)
    p0 = y.mean()
    if p0 in (0.0, 1.0):
        raise DegenerateLabelsError("training data contains a single class")
    edges = [bin_edges(data.X[:, j], params.bins) for j in range(data.X.shape[1])]
    codes = bin_codes(data.X, edges)
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    base = float(np.log(p0 / (1.0 - p0)))
    raw = np.full(n, base)
    lr = params.learning_rate
    trees, history = [], [logloss(data.y, raw)]
    for _ in range(params.trees):
        p = expit(raw)
        g = p - y
        h = p * (1.0 - p)
        tree, leaf_rows = _grow_tree(codes, g, h, edges, n_bins, params)
        if tree.n_leaves < 2:
            break
        for node, rows in leaf_rows.items():
            raw[rows] += lr * tree.value[node]
        trees.append(tree)
        history.append(logloss(data.y, raw))
    return GbdtModel(data.columns, base, lr, edges, trees, params, history)


def _as_matrix(model: GbdtModel, rows) -> np.ndarray:
    if isinstance(rows, Dataset):
        if rows.schema_hash != model.schema_hash:
            raise SchemaError("dataset schema does not match the model")
        return rows.X
    if isinstance(rows, Mapping):
        if set(rows) != set(model.names):
            missing = set(model.names) - set(rows)
            extra = set(rows) - set(model.names)
            raise SchemaError(f"row schema mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        return np.array([[float(rows[name]) for name in model.names]])
    X = np.asarray(rows, dtype=np.float64)
    if X.shape[-1] != len(model.columns):
        raise SchemaError(f"expected {len(model.columns)} features, got {X.shape[-1]}")
    return X


def predict(model: GbdtModel, rows):
    """Conflict probability and flag (probability >= 0.5).

    ``rows`` may be a :class:`Dataset`, a feature-name mapping for one row, or
    a raw matrix in the model's column order. A single mapping returns scalars.
    """
    X = _as_matrix(model, rows)
    prob = model.predict_proba(X)
    flag = prob >= 0.5
    if isinstance(rows, Mapping):
        return float(prob[0]), bool(flag[0])
    return prob, flag


@dataclass(frozen=True)
class Importance:
    name: str
    gain: float
    splits: int
    share: float


def feature_importance(model: GbdtModel) -> list[Importance]:
    """Total split gain and split count per feature, most important first."""
    F = len(model.columns)
    gains = np.zeros(F)
    counts = np.zeros(F, dtype=np.int64)
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(gains, tree.feature[internal], tree.gain[internal])
        np.add.at(counts, tree.feature[internal], 1)
    total = gains.sum()
    order = sorted(range(F), key=lambda j: (-gains[j], j))
    return [Importance(model.columns[j].name, float(gains[j]), int(counts[j]),
                       float(gains[j] / total) if total > 0 else 0.0) for j in order]
