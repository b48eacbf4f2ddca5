"""Embedding quality: leave-one-out kNN accuracy, k-means, V-measure."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class MetricsReport:
    knn_accuracy: float
    k_used: int
    homogeneity: float
    completeness: float
    v_score: float
    kmeans_inertia: float
    seeds: list = field(default_factory=list)
    protocol: str = "leave-one-out"

    def __post_init__(self):
        if not 0.0 <= self.knn_accuracy <= 100.0:
            raise ValueError("knn_accuracy must be a percentage")
        for name in ("homogeneity", "completeness", "v_score"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name} outside [0, 1]")

    def to_dict(self):
        return asdict(self)


def _coords(emb):
    return np.asarray(getattr(emb, "coords", emb), dtype=np.float64)


def knn_accuracy(emb, labels, k=100):
    """Percent of points whose k nearest embedded neighbors vote for their own label.

    Leave-one-out; euclidean distance; vote ties go to the smallest label.
    """
    if labels is None:
        raise ValueError("knn_accuracy needs labels")
    x = _coords(emb)
    labels = np.asarray(labels)
    n = x.shape[0]
    if labels.shape[0] != n:
        raise ValueError("labels and embedding differ in length")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    classes, y = np.unique(labels, return_inverse=True)
    _, nbr = cKDTree(x).query(x, k=k + 1)
    nbr = np.asarray(nbr).reshape(n, k + 1)
    # drop the query point itself; with duplicates it may not sit in column 0
    is_self = nbr == np.arange(n)[:, None]
    has_self = is_self.any(axis=1)
    is_self[~has_self, k] = True
    nbr = nbr[~is_self].reshape(n, k)
    votes = np.zeros((n, classes.size), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(n), k), y[nbr].ravel()), 1)
    pred = votes.argmax(axis=1)
    return float(100.0 * np.mean(pred == y))


@dataclass
class KMeansResult:
    labels: np.ndarray
    inertia: float
    centers: np.ndarray
    n_iter: int


def _sq_dists(x, centers):
    d = (np.einsum("ij,ij->i", x, x)[:, None] - 2.0 * x @ centers.T
         + np.einsum("ij,ij->i", centers, centers)[None, :])
    return np.maximum(d, 0.0)


def _kmeans_pp(x, c, rng):
    n = x.shape[0]
    centers = np.empty((c, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for t in range(1, c):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total))
            idx = min(idx, n - 1)
        centers[t] = x[idx]
        np.minimum(closest, np.sum((x - centers[t]) ** 2, axis=1), out=closest)
    return centers


def _lloyd(x, centers, max_iter, tol):
    prev = np.inf
    labels = np.zeros(x.shape[0], dtype=np.int64)
    inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centers)
        labels = d.argmin(axis=1)
        inertia = float(d[np.arange(x.shape[0]), labels].sum())
        counts = np.bincount(labels, minlength=centers.shape[0])
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        empty = counts == 0
        centers = np.where(empty[:, None], centers, sums / np.maximum(counts, 1)[:, None])
        if empty.any():
            # reseed empty clusters at the points worst served by their center
            far = np.argsort(-d[np.arange(x.shape[0]), labels])[: empty.sum()]
            centers[empty] = x[far]
        if prev < np.inf and abs(prev - inertia) <= tol * max(prev, 1e-300):
            break
        prev = inertia
    d = _sq_dists(x, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(x.shape[0]), labels].sum())
    return labels, inertia, centers, it


def kmeans(emb, c, restarts=10, seed=0, max_iter=300, tol=1e-4):
    """k-means++ seeding plus Lloyd iterations; best of ``restarts`` by inertia."""
    x = _coords(emb)
    n = x.shape[0]
    if not 1 <= c <= n:
        raise ValueError(f"need 1 <= c <= n (c={c}, n={n})")
    if c == n:
        return KMeansResult(np.arange(n), 0.0, x.copy(), 0)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        res = _lloyd(x, _kmeans_pp(x, c, rng), max_iter, tol)
        if best is None or res[1] < best[1]:
            best = res
    return KMeansResult(*best)


def _entropy(counts):
    counts = counts[counts > 0].astype(np.float64)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def v_score(true_labels, cluster_labels, mean="arithmetic"):
    """Homogeneity, completeness and their mean (arithmetic by default, or harmonic)."""
    a = np.asarray(true_labels)
    b = np.asarray(cluster_labels)
    if a.shape != b.shape:
        raise ValueError("label arrays differ in length")
    if a.size == 0:
        raise ValueError("need at least one labeled point")
    if mean not in ("arithmetic", "harmonic"):
        raise ValueError(f"unknown mean {mean!r}")
    _, ci = np.unique(a, return_inverse=True)
    _, ki = np.unique(b, return_inverse=True)
    table = np.zeros((ci.max() + 1, ki.max() + 1), dtype=np.int64)
    np.add.at(table, (ci, ki), 1)
    n = float(a.size)
    h_c = _entropy(table.sum(axis=1))
    h_k = _entropy(table.sum(axis=0))
    nz = table > 0
    joint = table[nz] / n
    # H(C|K) = -sum p(c,k) log(p(c,k) / p(k)); H(K|C) likewise
    pk = (table.sum(axis=0)[None, :] / n).repeat(table.shape[0], axis=0)[nz]
    pc = (table.sum(axis=1)[:, None] / n).repeat(table.shape[1], axis=1)[nz]
    h_c_k = float(-np.sum(joint * np.log(joint / pk)))
    h_k_c = float(-np.sum(joint * np.log(joint / pc)))
    h = 1.0 if h_c == 0 else 1.0 - h_c_k / h_c
    c = 1.0 if h_k == 0 else 1.0 - h_k_c / h_k
    if mean == "arithmetic":
        v = 0.5 * (h + c)
    else:
        v = 0.0 if h + c == 0 else 2.0 * h * c / (h + c)
    return h, c, v


def evaluate(emb, labels, k=100, n_clusters=None, seed=0, restarts=10):
    """kNN accuracy plus k-means V-measure with ``n_clusters`` = class count by default."""
    labels = np.asarray(labels)
    n = _coords(emb).shape[0]
    k = min(k, n - 1)
    acc = knn_accuracy(emb, labels, k)
    c = n_clusters or int(np.unique(labels).size)
    km = kmeans(emb, c, restarts=restarts, seed=seed)
    h, comp, v = v_score(labels, km.labels)
    return MetricsReport(acc, k, h, comp, v, km.inertia, [seed])
