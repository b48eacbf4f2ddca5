"""High-dimensional nearest-neighbor graphs: exact scan and NN-descent."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from ._rng import rand_below, rand_unit

CACHE_ENV = "GDR_CACHE_DIR"
_METRIC_CODES = {"euclidean": 0, "cosine": 1}
_CACHE_MAGIC = b"GDRKNN01"


def euclidean(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sqrt(np.sum((x - y) ** 2)))


def cosine(x, y):
    """``1 - cos(x, y)``; defined as 0 when either vector has zero norm."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(max(0.0, 1.0 - np.dot(x, y) / (nx * ny)))


@dataclass
class NeighborGraph:
    k: int
    indices: np.ndarray
    distances: np.ndarray
    metric: str = "euclidean"
    exact: bool = True

    @property
    def n(self):
        return self.indices.shape[0]

    def validate(self):
        n, k = self.indices.shape
        assert k == self.k and self.distances.shape == (n, k)
        assert np.all((self.indices >= 0) & (self.indices < n))
        assert not np.any(self.indices == np.arange(n)[:, None])
        assert np.all(np.isfinite(self.distances)) and np.all(self.distances >= 0)
        assert np.all(np.diff(self.distances, axis=1) >= 0)


def _check_k(n, k):
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    out = np.zeros_like(x)
    nz = norms > 0
    out[nz] = x[nz] / norms[nz, None]
    return out, nz


def _exact_rows(x, i, cand, metric):
    diff = x[cand] - x[i]
    if metric == "euclidean":
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    xi = x[i]
    ni = np.linalg.norm(xi)
    nc = np.linalg.norm(x[cand], axis=1)
    dots = x[cand] @ xi
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 - dots / (ni * nc)
    d[(nc == 0) | (ni == 0)] = 0.0
    return np.maximum(d, 0.0)


def exact_knn(data, k, block_elems=10_000_000):
    """Brute-force kNN; ties broken by smaller index.

    Candidates are screened with a BLAS distance expansion, then every
    surviving candidate is re-measured directly so that ties and duplicate
    points are resolved on exact values.
    """
    x = np.asarray(data.points, dtype=np.float64)
    n = x.shape[0]
    _check_k(n, k)
    metric = data.metric
    if metric == "cosine":
        ref, nonzero = _unit_rows(x)
        scale = 1.0
    else:
        ref = x
        sq = np.einsum("ij,ij->i", x, x)
        scale = float(sq.max()) if n else 1.0
    tol = 1e-9 * max(scale, 1.0)
    indices = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k), dtype=np.float64)
    block = max(1, int(block_elems // n))
    for start in range(0, n, block):
        stop = min(n, start + block)
        g = ref[start:stop] @ ref.T
        if metric == "cosine":
            approx = 1.0 - g
            # zero vectors are at distance 0 from everything
            approx[:, ~nonzero] = 0.0
            approx[~nonzero[start:stop]] = 0.0
        else:
            approx = sq[start:stop, None] + sq[None, :] - 2.0 * g
        rows = np.arange(stop - start)
        approx[rows, rows + start] = np.inf
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            i = start + r
            cand = np.flatnonzero(approx[r] <= kth[r] + tol)
            d = _exact_rows(x, i, cand, metric)
            order = np.lexsort((cand, d))[:k]
            indices[i] = cand[order]
            dists[i] = d[order]
    return NeighborGraph(k, indices, dists, metric, True)


@njit(cache=True)
def _dist(x, i, j, metric):
    if metric == 0:
        s = 0.0
        for c in range(x.shape[1]):
            t = np.float64(x[i, c]) - np.float64(x[j, c])
            s += t * t
        return np.sqrt(s)
    dot = 0.0
    ni = 0.0
    nj = 0.0
    for c in range(x.shape[1]):
        a = np.float64(x[i, c])
        b = np.float64(x[j, c])
        dot += a * b
        ni += a * a
        nj += b * b
    if ni == 0.0 or nj == 0.0:
        return 0.0
    d = 1.0 - dot / np.sqrt(ni * nj)
    return d if d > 0.0 else 0.0


@njit(cache=True)
def _heap_push(hd, hi, hf, row, d, j, flag):
    """Max-heap insert into a fixed-size row; returns 1 if the row changed."""
    if d >= hd[row, 0]:
        return 0
    k = hd.shape[1]
    for t in range(k):
        if hi[row, t] == j:
            return 0
    hd[row, 0] = d
    hi[row, 0] = j
    hf[row, 0] = flag
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        if left >= k:
            break
        child = left
        if right < k and hd[row, right] > hd[row, left]:
            child = right
        if hd[row, child] <= d:
            break
        hd[row, pos] = hd[row, child]
        hi[row, pos] = hi[row, child]
        hf[row, pos] = hf[row, child]
        pos = child
    hd[row, pos] = d
    hi[row, pos] = j
    hf[row, pos] = flag
    return 1


@njit(cache=True)
def _cand_push(ci, cp, row, j, prio):
    """Keep the ``C`` lowest-priority distinct candidates per row."""
    cap = ci.shape[1]
    worst = 0
    for t in range(cap):
        if ci[row, t] == j:
            return
        if cp[row, t] > cp[row, worst]:
            worst = t
    if prio < cp[row, worst]:
        ci[row, worst] = j
        cp[row, worst] = prio


@njit(cache=True)
def _nn_descent(x, k, seed, max_iters, rho, delta, metric):
    n = x.shape[0]
    hd = np.full((n, k), np.inf)
    hi = np.full((n, k), -1, dtype=np.int64)
    hf = np.ones((n, k), dtype=np.uint8)
    scratch = np.empty(n - 1, dtype=np.int64)
    for i in range(n):
        if 2 * k < n:
            filled = 0
            t = 0
            while filled < k:
                j = rand_below(seed, 0, i, t, n)
                t += 1
                if j != i:
                    filled += _heap_push(hd, hi, hf, i, _dist(x, i, j, metric), j, 1)
        else:
            m = 0
            for j in range(n):
                if j != i:
                    scratch[m] = j
                    m += 1
            for t in range(k):
                s = t + rand_below(seed, 1, i, t, n - 1 - t)
                tmp = scratch[t]
                scratch[t] = scratch[s]
                scratch[s] = tmp
                _heap_push(hd, hi, hf, i, _dist(x, i, scratch[t], metric), scratch[t], 1)
    cap = max(1, int(np.ceil(rho * k)))
    new_c = np.empty((n, cap), dtype=np.int64)
    new_p = np.empty((n, cap))
    old_c = np.empty((n, cap), dtype=np.int64)
    old_p = np.empty((n, cap))
    for it in range(max_iters):
        new_c[:] = -1
        new_p[:] = np.inf
        old_c[:] = -1
        old_p[:] = np.inf
        for i in range(n):
            for t in range(k):
                j = hi[i, t]
                if j < 0:
                    continue
                prio = rand_unit(seed, 2 + it, i, j)
                if hf[i, t] == 1:
                    _cand_push(new_c, new_p, i, j, prio)
                    _cand_push(new_c, new_p, j, i, prio)
                else:
                    _cand_push(old_c, old_p, i, j, prio)
                    _cand_push(old_c, old_p, j, i, prio)
        # only candidates that made it into a sampled list lose their "new" flag
        for i in range(n):
            for t in range(k):
                j = hi[i, t]
                for s in range(cap):
                    if new_c[i, s] == j:
                        hf[i, t] = 0
                        break
        updates = 0
        for i in range(n):
            for a in range(cap):
                u = new_c[i, a]
                if u < 0:
                    continue
                for b in range(a + 1, cap):
                    v = new_c[i, b]
                    if v < 0 or v == u:
                        continue
                    d = _dist(x, u, v, metric)
                    updates += _heap_push(hd, hi, hf, u, d, v, 1)
                    updates += _heap_push(hd, hi, hf, v, d, u, 1)
                for b in range(cap):
                    v = old_c[i, b]
                    if v < 0 or v == u:
                        continue
                    d = _dist(x, u, v, metric)
                    updates += _heap_push(hd, hi, hf, u, d, v, 1)
                    updates += _heap_push(hd, hi, hf, v, d, u, 1)
        if updates <= delta * n * k:
            break
    return hi, hd


def nn_descent(data, k, seed=0, max_iters=10, sample_rate=0.5, delta=0.001):
    """Approximate kNN by iterative neighbor-of-neighbor refinement."""
    n = data.n
    _check_k(n, k)
    metric = _METRIC_CODES[data.metric]
    hi, hd = _nn_descent(data.points, k, np.uint64(seed), max_iters, sample_rate, delta, metric)
    order = np.lexsort((hi, hd), axis=1)
    indices = np.take_along_axis(hi, order, axis=1)
    dists = np.take_along_axis(hd, order, axis=1)
    return NeighborGraph(k, indices, dists, data.metric, False)


def recall(approx, exact):
    """Fraction of exact neighbor slots recovered by ``approx``."""
    hits = 0
    for a, e in zip(approx.indices, exact.indices):
        hits += np.intersect1d(a, e, assume_unique=True).size
    return hits / exact.indices.size


def build_knn(data, k, exact=True, seed=0, cache_dir=None):
    """kNN graph, reusing an on-disk cache when a cache directory is configured."""
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    path = None
    if cache_dir:
        tag = "exact" if exact else f"nnd{seed}"
        path = Path(cache_dir) / f"knn_{data.content_hash()}_{k}_{tag}.bin"
        if path.exists():
            return load_graph(path)
    graph = exact_knn(data, k) if exact else nn_descent(data, k, seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_graph(graph, path)
    return graph


def save_graph(graph, path):
    n, k = graph.indices.shape
    header = _CACHE_MAGIC + struct.pack("<QQBB", n, k, _METRIC_CODES[graph.metric], int(graph.exact))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(graph.indices.astype("<i8").tobytes())
        fh.write(graph.distances.astype("<f8").tobytes())


def load_graph(path):
    raw = Path(path).read_bytes()
    if raw[:8] != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a kNN cache file")
    n, k, metric, exact = struct.unpack("<QQBB", raw[8:26])
    body = raw[26:]
    if len(body) != 16 * n * k:
        raise ValueError(f"{path}: truncated kNN cache")
    idx = np.frombuffer(body[: 8 * n * k], dtype="<i8").reshape(n, k).astype(np.int64)
    dist = np.frombuffer(body[8 * n * k:], dtype="<f8").reshape(n, k).astype(np.float64)
    name = {v: s for s, v in _METRIC_CODES.items()}[metric]
    return NeighborGraph(int(k), idx, dist, name, bool(exact))
