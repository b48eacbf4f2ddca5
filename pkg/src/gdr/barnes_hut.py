"""Barnes-Hut quadtree repulsion for 2-D embeddings.

The tree is stored as flat arrays. Points are reordered into ``perm`` so that
every node owns a contiguous slice ``perm[start:end]``; ``pos[i]`` is the slot
of point ``i`` in that order, which makes "does this node contain i" an
integer range check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from ._forces import KL_NORM, repulse_terms, sampled_repulsion_point
from ._rng import rand_below

MAX_DEPTH = 48


@dataclass
class QuadTree:
    center: np.ndarray      # (m, 2)
    half: np.ndarray        # (m,) half-width of the node box
    mass: np.ndarray        # (m,) point count
    com: np.ndarray         # (m, 2) center of mass
    child: np.ndarray       # (m, 4) child node ids, -1 when absent
    start: np.ndarray       # (m,)
    end: np.ndarray         # (m,)
    perm: np.ndarray        # (n,)
    pos: np.ndarray         # (n,)
    theta: float = 0.5

    @property
    def n_nodes(self):
        return self.half.shape[0]

    def is_leaf(self, node):
        return bool(np.all(self.child[node] < 0))

    def members(self, node):
        return self.perm[self.start[node]:self.end[node]]

    def leaves(self):
        return np.flatnonzero(np.all(self.child < 0, axis=1))


@njit(cache=True)
def _build(y, max_depth):
    n = y.shape[0]
    cap = 4 * n + 8
    center = np.zeros((cap, 2))
    half = np.zeros(cap)
    mass = np.zeros(cap)
    com = np.zeros((cap, 2))
    child = np.full((cap, 4), -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    perm = np.arange(n)
    tmp = np.empty(n, dtype=np.int64)
    quad = np.empty(n, dtype=np.int64)

    lo0 = y[:, 0].min()
    hi0 = y[:, 0].max()
    lo1 = y[:, 1].min()
    hi1 = y[:, 1].max()
    center[0, 0] = 0.5 * (lo0 + hi0)
    center[0, 1] = 0.5 * (lo1 + hi1)
    w = max(hi0 - lo0, hi1 - lo1)
    half[0] = 0.5 * w * (1.0 + 1e-9) + 1e-12
    start[0] = 0
    end[0] = n
    m = 1
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s0 = start[node]
        s1 = end[node]
        cnt = s1 - s0
        mass[node] = cnt
        cx = 0.0
        cy = 0.0
        for t in range(s0, s1):
            cx += y[perm[t], 0]
            cy += y[perm[t], 1]
        com[node, 0] = cx / cnt
        com[node, 1] = cy / cnt
        if cnt <= 1 or depth[node] >= max_depth:
            continue
        same = True
        p0 = perm[s0]
        for t in range(s0 + 1, s1):
            if y[perm[t], 0] != y[p0, 0] or y[perm[t], 1] != y[p0, 1]:
                same = False
                break
        if same:
            continue
        counts = np.zeros(4, dtype=np.int64)
        for t in range(s0, s1):
            j = perm[t]
            q = 0
            if y[j, 0] >= center[node, 0]:
                q += 1
            if y[j, 1] >= center[node, 1]:
                q += 2
            quad[t] = q
            counts[q] += 1
        offs = np.zeros(4, dtype=np.int64)
        acc = s0
        for q in range(4):
            offs[q] = acc
            acc += counts[q]
        fill = offs.copy()
        for t in range(s0, s1):
            tmp[fill[quad[t]]] = perm[t]
            fill[quad[t]] += 1
        for t in range(s0, s1):
            perm[t] = tmp[t]
        h = 0.5 * half[node]
        for q in range(4):
            if counts[q] == 0:
                continue
            if m >= cap:
                raise RuntimeError("quadtree node capacity exceeded")
            c = m
            m += 1
            center[c, 0] = center[node, 0] + (h if q & 1 else -h)
            center[c, 1] = center[node, 1] + (h if q & 2 else -h)
            half[c] = h
            start[c] = offs[q]
            end[c] = offs[q] + counts[q]
            depth[c] = depth[node] + 1
            child[node, q] = c
            stack[top] = c
            top += 1
    pos = np.empty(n, dtype=np.int64)
    for t in range(n):
        pos[perm[t]] = t
    return (center[:m].copy(), half[:m].copy(), mass[:m].copy(), com[:m].copy(),
            child[:m].copy(), start[:m].copy(), end[:m].copy(), perm, pos)


def build(y, theta=0.5, max_depth=MAX_DEPTH):
    """Quadtree over the bounding square of ``y`` (n x 2)."""
    y = np.ascontiguousarray(getattr(y, "coords", y), dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError(f"Barnes-Hut supports 2-D embeddings only (got shape {y.shape})")
    if y.shape[0] < 1 or not np.all(np.isfinite(y)):
        raise ValueError("need at least one point with finite coordinates")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    parts = _build(y, max_depth)
    return QuadTree(*parts, theta=float(theta))


@njit(cache=True)
def _query(i, y, half, mass, com, child, start, end, perm, pos, theta, mode, pbar,
           a, b, eps, stack):
    """Raw repulsion sums on point ``i``: ``(ux, uy, vx, vy, z, z2, summarized, pairs)``."""
    yi0 = y[i, 0]
    yi1 = y[i, 1]
    pi = pos[i]
    ux = 0.0
    uy = 0.0
    vx = 0.0
    vy = 0.0
    z = 0.0
    z2 = 0.0
    summarized = 0
    pairs = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        leaf = child[node, 0] < 0 and child[node, 1] < 0 and child[node, 2] < 0 and child[node, 3] < 0
        inside = start[node] <= pi and pi < end[node]
        if leaf:
            for t in range(start[node], end[node]):
                j = perm[t]
                if j == i:
                    continue
                dx = yi0 - y[j, 0]
                dy = yi1 - y[j, 1]
                tu, tv, w = repulse_terms(mode, dx * dx + dy * dy, pbar, a, b, eps)
                ux += tu * dx
                uy += tu * dy
                vx += tv * dx
                vy += tv * dy
                z += w
                z2 += w * w
                pairs += 1
            continue
        dx = yi0 - com[node, 0]
        dy = yi1 - com[node, 1]
        s = dx * dx + dy * dy
        # opening test on the full cell width, as in the reference BH-TSNE code
        if not inside and 2.0 * half[node] < theta * np.sqrt(s):
            mm = mass[node]
            tu, tv, w = repulse_terms(mode, s, pbar, a, b, eps)
            ux += mm * tu * dx
            uy += mm * tu * dy
            vx += mm * tv * dx
            vy += mm * tv * dy
            z += mm * w
            z2 += mm * w * w
            summarized += 1
            pairs += np.int64(mm)
            continue
        for q in range(4):
            c = child[node, q]
            if c >= 0:
                stack[top] = c
                top += 1
    return ux, uy, vx, vy, z, z2, summarized, pairs


def _query_all(y, half, mass, com, child, start, end, perm, pos, theta, mode, pbar,
               a, b, eps, max_depth):
    n = y.shape[0]
    U = np.zeros((n, 2))
    V = np.zeros((n, 2))
    z = np.zeros(n)
    z2 = np.zeros(n)
    counts = np.zeros((n, 2), dtype=np.int64)
    for i in prange(n):
        stack = np.empty(4 * max_depth + 8, dtype=np.int64)
        r = _query(i, y, half, mass, com, child, start, end, perm, pos, theta, mode,
                   pbar, a, b, eps, stack)
        U[i, 0] = r[0]
        U[i, 1] = r[1]
        V[i, 0] = r[2]
        V[i, 1] = r[3]
        z[i] = r[4]
        z2[i] = r[5]
        counts[i, 0] = r[6]
        counts[i, 1] = r[7]
    return U, V, z, z2, counts


# one python body, two compiled variants; only the serial one is disk-cached
_query_all_serial = njit(cache=True)(_query_all)
_query_all_parallel = None


def _query_all_fn(workers):
    global _query_all_parallel
    if workers <= 1:
        return _query_all_serial
    if _query_all_parallel is None:
        _query_all_parallel = njit(parallel=True)(_query_all)
    return _query_all_parallel


@dataclass
class RepulsionSums:
    """Raw per-point repulsion sums from one traversal (see ``_forces``)."""

    U: np.ndarray
    V: np.ndarray
    z: np.ndarray
    z2: np.ndarray
    summarized: int
    pairs: int

    @property
    def Z(self):
        return float(self.z.sum())


def repulsion_sums(y, tree, mode=KL_NORM, pbar=0.0, a=1.0, b=1.0, eps=1e-3, workers=1):
    y = np.ascontiguousarray(getattr(y, "coords", y), dtype=np.float64)
    fn = _query_all_fn(workers)
    U, V, z, z2, counts = fn(y, tree.half, tree.mass, tree.com, tree.child, tree.start,
                             tree.end, tree.perm, tree.pos, tree.theta, mode, pbar,
                             a, b, eps, MAX_DEPTH)
    return RepulsionSums(U, V, z, z2, int(counts[:, 0].sum()), int(counts[:, 1].sum()))


def bh_repulsion(y, i, tree, theta=None):
    """Student-t repulsion numerator ``sum_k q_ik^2 (y_i - y_k)`` and ``sum_k q_ik`` for one point.

    ``q`` is the unnormalized kernel ``1 / (1 + |y_i - y_k|^2)``; dividing
    the force by the global Z gives the normalized repulsive gradient up to
    the factor 4.
    """
    y = np.ascontiguousarray(getattr(y, "coords", y), dtype=np.float64)
    th = tree.theta if theta is None else float(theta)
    stack = np.empty(4 * MAX_DEPTH + 8, dtype=np.int64)
    r = _query(int(i), y, tree.half, tree.mass, tree.com, tree.child, tree.start, tree.end,
               tree.perm, tree.pos, th, KL_NORM, 0.0, 1.0, 1.0, 1e-3, stack)
    return np.array([r[0], r[1]]), float(r[4])


def dense_repulsion(y):
    """Exact ``sum_k q_ik^2 (y_i - y_k)`` for every point and the total Z."""
    y = np.asarray(getattr(y, "coords", y), dtype=np.float64)
    diff = y[:, None, :] - y[None, :, :]
    w = 1.0 / (1.0 + np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(w, 0.0)
    return np.einsum("ij,ijk->ik", w * w, diff), float(w.sum())


def vector_angle(u, v):
    """Angle between two vectors in radians, or ``None`` if either has zero length."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return None
    return float(np.arccos(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)))


@dataclass
class AngleReport:
    mean: float
    n_used: int
    n_skipped: int


def angle_agreement(y, tree, g, seed, m=200, epoch=0, neg_rate=1, mode=KL_NORM,
                    a=1.0, b=1.0, eps=1e-3):
    """Mean angle between Barnes-Hut repulsion and the explicit-mode sampled repulsion.

    The sampled estimate for point ``i`` uses exactly the partners the
    explicit optimizer would draw for ``i`` at ``epoch``; ``neg_rate >= n-1``
    visits every other point once. Both directions are computed with the same
    ``mode`` kernel so only the sampling differs.
    """
    y = np.ascontiguousarray(getattr(y, "coords", y), dtype=np.float64)
    n = y.shape[0]
    exhaustive = neg_rate >= n - 1
    picks = np.unique([rand_below(np.uint64(seed), 7, epoch, t, n) for t in range(m)])
    stack = np.empty(4 * MAX_DEPTH + 8, dtype=np.int64)
    pbar = g.mean_p
    angles, skipped = [], 0
    for i in picks:
        r = _query(int(i), y, tree.half, tree.mass, tree.com, tree.child, tree.start,
                   tree.end, tree.perm, tree.pos, tree.theta, mode, pbar, a, b, eps, stack)
        s = sampled_repulsion_point(int(i), y, g.indptr, g.indices, g.weights, neg_rate,
                                    exhaustive, np.uint64(seed), epoch, mode, pbar, a, b, eps)
        ang = vector_angle(np.array(r[:2]), np.array(s[:2]))
        if ang is None:
            skipped += 1
        else:
            angles.append(ang)
    mean = float(np.mean(angles)) if angles else float("nan")
    return AngleReport(mean, len(angles), skipped)
