"""Synthetic minority oversampling."""
from __future__ import annotations

import numpy as np
from sklearn.neighbors import NearestNeighbors

from ..errors import InsufficientMinorityError
from .dataset import Dataset


def smote(data: Dataset, k: int = 5, seed: int | np.random.Generator = 0) -> Dataset:
    """Raise the minority class to exact parity with interpolated rows.

    Each synthetic row picks a minority parent (round-robin over the minority,
    so every parent is used about equally), one of its ``k`` nearest minority
    neighbours and a uniform fraction ``u``; continuous columns become
    ``x_parent + u * (x_nn - x_parent)`` while binary and categorical columns
    are copied from the parent. Neighbour distances use the minority rows'
    continuous columns standardised by the statistics of ``data`` itself.
    """
    neg, pos = data.class_counts()
    if neg == pos:
        return data
    minority = 1 if pos < neg else 0
    need = abs(neg - pos)
    idx = np.flatnonzero(data.y == minority)
    if idx.size < k + 1:
        raise InsufficientMinorityError(f"minority class has {idx.size} rows, need at least {k + 1}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    cont = data.continuous
    X = data.X
    mu = X[:, cont].mean(axis=0)
    sd = X[:, cont].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X[idx][:, cont] - mu) / sd if cont.any() else np.zeros((idx.size, 1))
    nn = NearestNeighbors(n_neighbors=k + 1).fit(Z)
    _, nbr = nn.kneighbors(Z)
    # drop self; duplicates of a point may shuffle ordering, so remove by identity
    own = np.arange(idx.size)[:, None]
    nbr = np.array([row[row != i][:k] if np.any(row == i) else row[:k]
                    for row, i in zip(nbr, own[:, 0])])

    parents = np.arange(need) % idx.size
    choice = rng.integers(0, k, size=need)
    u = rng.random(need)
    p_rows = idx[parents]
    n_rows = idx[nbr[parents, choice]]
    X_new = X[p_rows].copy()
    X_new[:, cont] = X[p_rows][:, cont] + u[:, None] * (X[n_rows][:, cont] - X[p_rows][:, cont])

    return Dataset(
        np.vstack([X, X_new]),
        np.concatenate([data.y, np.full(need, minority, dtype=np.int8)]),
        data.columns,
        np.concatenate([data.row_id, np.full(need, -1, dtype=np.int64)]),
        np.concatenate([data.parent, data.row_id[p_rows]]),
        np.concatenate([data.neighbor, data.row_id[n_rows]]),
        dict(data.meta),
    )


def neighbor_sets(data: Dataset, k: int = 5) -> dict[int, set[int]]:
    """The ``k`` nearest same-class neighbours (by row id) of every minority row.

    Used to audit synthetic rows; mirrors the search inside :func:`smote`.
    """
    neg, pos = data.class_counts()
    minority = 1 if pos < neg else 0
    idx = np.flatnonzero(data.y == minority)
    cont = data.continuous
    mu = data.X[:, cont].mean(axis=0)
    sd = data.X[:, cont].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (data.X[idx][:, cont] - mu) / sd
    dist = np.linalg.norm(Z[:, None, :] - Z[None, :, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    out = {}
    for i, row in enumerate(dist):
        kth = np.sort(row)[k - 1]
        out[int(data.row_id[idx[i]])] = {int(data.row_id[idx[j]]) for j in np.flatnonzero(row <= kth + 1e-12)}
    return out
