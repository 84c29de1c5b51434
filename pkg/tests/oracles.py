"""Independent reference implementations used as test oracles."""
import math

import numpy as np

STEP = 1e-3  # s
TIE = 1e-10  # relative gain difference treated as a tie


def first_collision(gap, v_f, v_l, a_f, a_l, horizon=30.0, dt=STEP):
    """First time the gap reaches zero, stepping both vehicles forward every ``dt``.

    Constant-acceleration kinematics are integrated exactly per step, so the
    only error is the 1 ms time resolution. Returns inf when no crossing
    happens within ``horizon``.
    """
    gap = np.asarray(gap, float)
    x_f = np.zeros_like(gap)
    x_l = gap.copy()
    vf = np.asarray(v_f, float).copy()
    vl = np.asarray(v_l, float).copy()
    af = np.asarray(a_f, float)
    al = np.asarray(a_l, float)
    hit = np.full(gap.shape, np.inf)
    alive = np.ones(gap.shape, bool)
    for k in range(1, int(round(horizon / dt)) + 1):
        x_f += vf * dt + 0.5 * af * dt * dt
        x_l += vl * dt + 0.5 * al * dt * dt
        vf += af * dt
        vl += al * dt
        crossed = alive & (x_l - x_f <= 0)
        hit[crossed] = k * dt
        alive &= ~crossed
        if not alive.any():
            break
    return hit


def ttc_oracle(gap, v_f, v_l):
    if v_f <= v_l:
        return math.inf
    return gap / (v_f - v_l)


def drac_oracle(gap, v_f, v_l):
    if v_f <= v_l:
        return 0.0
    return (v_f - v_l) ** 2 / (2 * gap)


def exact_best_split(X, g, h, min_rows=1, min_hess=0.0):
    """Brute-force best split over every midpoint between sorted distinct values.

    Returns ``(gain, feature, threshold)`` with ties resolved towards the
    lowest feature and the lowest threshold, or None.
    """
    G, H = g.sum(), h.sum()
    parent = G * G / H
    best = None
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = lo + (hi - lo) / 2
            left = X[:, f] <= thr
            if left.sum() < min_rows or (~left).sum() < min_rows:
                continue
            hl, hr = h[left].sum(), h[~left].sum()
            if hl < min_hess or hr < min_hess:
                continue
            gl, gr = g[left].sum(), g[~left].sum()
            gain = gl * gl / hl + gr * gr / hr - parent
            if best is None or gain > best[0] + TIE * max(1.0, abs(best[0])):
                best = (gain, f, thr)
    return best


def triangle_centroid(a, b, c):
    return (a + b + c) / 3.0


def clipped_triangle_centroid(a, b, c, level, n=200001):
    z = np.linspace(a, c, n)
    mu = np.minimum(level, np.interp(z, (a, b, c), (0.0, 1.0, 0.0)))
    return float(np.sum(mu * z) / np.sum(mu))


def true_neighbours(d, k=5):
    """k nearest same-class rows of every minority row, by brute force."""
    minority = int(d.y.sum() < len(d) / 2)
    idx = np.flatnonzero(d.y == minority)
    cont = d.continuous
    mu, sd = d.X[:, cont].mean(0), d.X[:, cont].std(0)
    Z = (d.X[idx][:, cont] - mu) / np.where(sd > 0, sd, 1)
    out = {}
    for a, i in enumerate(idx):
        dist = np.sqrt(((Z - Z[a]) ** 2).sum(1))
        dist[a] = np.inf
        kth = np.sort(dist)[k - 1]
        out[i] = set(idx[dist <= kth + 1e-12])
    return out
