"""High-dimensional similarities: row calibration, symmetrization, normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

CALIBRATIONS = ("perplexity", "umap")
SYMMETRIZATIONS = ("average", "probabilistic")
PSEUDO_LEVELS = ("squared", "distance")

BRACKET = (1e-10, 1e10)
MAX_ITERS = 100
# well inside the 1e-5 contract, so rows are reproducible to 1e-6 under rescaling
TOL = 1e-9


@dataclass
class AffinityConfig:
    calibration: str = "umap"
    perplexity: float = 30.0
    pseudo_distance: bool = True
    pseudo_level: str = "squared"
    symmetrization: str = "probabilistic"
    normalize: bool = False

    def __post_init__(self):
        if self.calibration not in CALIBRATIONS:
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.symmetrization not in SYMMETRIZATIONS:
            raise ValueError(f"unknown symmetrization {self.symmetrization!r}")
        if self.pseudo_level not in PSEUDO_LEVELS:
            raise ValueError(f"unknown pseudo_level {self.pseudo_level!r}")
        if self.perplexity <= 1:
            raise ValueError("perplexity must exceed 1")


@dataclass
class AffinityGraph:
    """Symmetric sparse P stored as CSR with both directions of every edge."""

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    sigma_or_tau: np.ndarray
    rho: np.ndarray
    p_sum: float
    normalized: bool = False
    degenerate_rows: int = 0
    mean_p: float = field(init=False)

    def __post_init__(self):
        self.mean_p = float(self.weights.mean()) if self.weights.size else 0.0

    @property
    def n(self):
        return self.indptr.shape[0] - 1

    @property
    def n_directed(self):
        return self.weights.shape[0]

    def heads(self):
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def edges(self):
        """Undirected edge list ``(i, j, p_ij)`` with ``i < j``."""
        i = self.heads()
        keep = i < self.indices
        return i[keep], self.indices[keep], self.weights[keep]

    def to_csr(self):
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.n, self.n))

    def dense(self):
        return self.to_csr().toarray()

    def degrees(self):
        return np.diff(self.indptr)


@njit(cache=True)
def _shift(d, pseudo, level):
    """Effective distances after the optional nearest-neighbor shift."""
    rho = d.min() if pseudo else 0.0
    out = np.empty_like(d)
    for j in range(d.shape[0]):
        if level == 0:
            s = d[j] * d[j] - rho * rho
            out[j] = np.sqrt(s) if s > 0.0 else 0.0
        else:
            s = d[j] - rho
            out[j] = s if s > 0.0 else 0.0
    return out, rho


@njit(cache=True)
def _perplexity_entropy(d2, sigma, p):
    beta = 1.0 / (2.0 * sigma * sigma)
    total = 0.0
    for j in range(d2.shape[0]):
        p[j] = np.exp(-d2[j] * beta)
        total += p[j]
    h = 0.0
    for j in range(d2.shape[0]):
        p[j] /= total
        if p[j] > 0.0:
            h -= p[j] * np.log2(p[j])
    return h


@njit(cache=True)
def _calibrate_perplexity_rows(dists, perplexity, pseudo, level):
    n, k = dists.shape
    sigma = np.empty(n)
    rho = np.zeros(n)
    P = np.empty((n, k))
    bad = np.zeros(n, dtype=np.bool_)
    lo0 = np.log(BRACKET[0])
    hi0 = np.log(BRACKET[1])
    for i in range(n):
        eff, rho[i] = _shift(dists[i], pseudo, level)
        d2 = eff * eff
        d2 -= d2.min()
        p = P[i]
        if d2.max() == 0.0:
            p[:] = 1.0 / k
            sigma[i] = np.exp(0.5 * (lo0 + hi0))
            bad[i] = True
            continue
        lo = lo0
        hi = hi0
        mid = 0.5 * (lo + hi)
        ok = False
        for _ in range(MAX_ITERS):
            mid = 0.5 * (lo + hi)
            perp = 2.0 ** _perplexity_entropy(d2, np.exp(mid), p)
            if abs(perp - perplexity) <= TOL * perplexity:
                ok = True
                break
            if perp > perplexity:
                hi = mid
            else:
                lo = mid
        sigma[i] = np.exp(mid)
        bad[i] = not ok
    return sigma, rho, P, bad


@njit(cache=True)
def _umap_mass(s, tau, p):
    total = 0.0
    for j in range(s.shape[0]):
        v = np.exp(-s[j] / tau)
        p[j] = v if v < 1.0 else 1.0
        total += p[j]
    return total


@njit(cache=True)
def _calibrate_umap_rows(dists, pseudo, level):
    n, k = dists.shape
    tau = np.empty(n)
    rho = np.empty(n)
    P = np.empty((n, k))
    bad = np.zeros(n, dtype=np.bool_)
    target = np.log2(k)
    lo0 = np.log(BRACKET[0])
    hi0 = np.log(BRACKET[1])
    for i in range(n):
        eff, rho[i] = _shift(dists[i], pseudo, level)
        s = eff * eff
        p = P[i]
        lo = lo0
        hi = hi0
        mid = 0.5 * (lo + hi)
        ok = False
        for _ in range(MAX_ITERS):
            mid = 0.5 * (lo + hi)
            total = _umap_mass(s, np.exp(mid), p)
            if abs(total - target) <= TOL:
                ok = True
                break
            if total > target:
                hi = mid
            else:
                lo = mid
        tau[i] = np.exp(mid)
        bad[i] = not ok
    return tau, rho, P, bad


def _rows(d):
    d = np.asarray(d, dtype=np.float64)
    return d.reshape(1, -1) if d.ndim == 1 else d


def calibrate_perplexity(row_distances, perplexity, pseudo_distance=False, pseudo_level="squared"):
    """Gaussian row with ``2**H`` matching ``perplexity``; returns ``(sigma, p_row)``."""
    d = _rows(row_distances)
    if d.shape[1] < 2 or not 1 < perplexity < d.shape[1]:
        raise ValueError("need k >= 2 and 1 < perplexity < k")
    sigma, _, P, _ = _calibrate_perplexity_rows(d, float(perplexity), pseudo_distance,
                                                PSEUDO_LEVELS.index(pseudo_level))
    return float(sigma[0]), P[0]


def calibrate_umap(row_distances, pseudo_distance=True, pseudo_level="squared"):
    """Unnormalized row with ``sum(p) = log2(k)``; returns ``(tau, rho, p_row)``."""
    d = _rows(row_distances)
    if d.shape[1] < 2:
        raise ValueError("need k >= 2")
    tau, rho, P, _ = _calibrate_umap_rows(d, pseudo_distance, PSEUDO_LEVELS.index(pseudo_level))
    return float(tau[0]), float(rho[0]), P[0]


def calibrate_rows(distances, cfg):
    """Batch calibration over an ``n x k`` distance matrix.

    Returns ``(scale, rho, P, degenerate_mask)``.
    """
    d = np.ascontiguousarray(distances, dtype=np.float64)
    level = PSEUDO_LEVELS.index(cfg.pseudo_level)
    if cfg.calibration == "perplexity":
        if not cfg.perplexity < d.shape[1]:
            raise ValueError(f"perplexity {cfg.perplexity} must be < k={d.shape[1]}")
        return _calibrate_perplexity_rows(d, float(cfg.perplexity), cfg.pseudo_distance, level)
    return _calibrate_umap_rows(d, cfg.pseudo_distance, level)


def symmetrize(indices, conditional, mode, scale=None, rho=None, degenerate_rows=0):
    """Merge directed conditionals ``p_{j|i}`` into a symmetric graph.

    Missing reverse entries count as zero; zero-weight edges are dropped.
    """
    indices = np.asarray(indices)
    conditional = np.asarray(conditional, dtype=np.float64)
    n, k = indices.shape
    rows = np.repeat(np.arange(n), k)
    C = sp.csr_matrix((conditional.ravel(), (rows, indices.ravel())), shape=(n, n))
    C.sum_duplicates()
    T = C.T.tocsr()
    if mode == "average":
        S = (C + T) * 0.5
    elif mode == "probabilistic":
        S = C + T - C.multiply(T)
    else:
        raise ValueError(f"unknown symmetrization {mode!r}")
    S = sp.csr_matrix(S)
    S.setdiag(0.0)
    S.eliminate_zeros()
    S.sort_indices()
    w = S.data.astype(np.float64)
    return AffinityGraph(
        S.indptr.astype(np.int64), S.indices.astype(np.int64), w,
        np.zeros(n) if scale is None else np.asarray(scale, dtype=np.float64),
        np.zeros(n) if rho is None else np.asarray(rho, dtype=np.float64),
        float(w.sum()), False, degenerate_rows,
    )


def normalize_affinities(g):
    """Divide every weight by the directed-pair total so that P sums to 1."""
    total = float(g.weights.sum())
    if g.weights.size == 0 or total <= 0:
        raise ValueError("cannot normalize an empty affinity graph")
    return AffinityGraph(g.indptr, g.indices, g.weights / total, g.sigma_or_tau, g.rho,
                         total, True, g.degenerate_rows)


def build_affinity(knn, cfg):
    scale, rho, P, bad = calibrate_rows(knn.distances, cfg)
    g = symmetrize(knn.indices, P, cfg.symmetrization, scale, rho, int(bad.sum()))
    return normalize_affinities(g) if cfg.normalize else g
