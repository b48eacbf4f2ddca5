"""Initial embeddings: small Gaussian draw or Laplacian eigenmap."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .data_io import EmbeddingRecord

INIT_MODES = ("random", "spectral", "auto")
DENSE_LIMIT = 2000
RESIDUAL_TOL = 1e-6
AUTO_SPECTRAL_MAX_N = 100_000


@dataclass
class InitConfig:
    mode: str = "spectral"
    seed: int = 0
    random_sd: float = 1e-2
    spectral_scale: float = 10.0
    weighted: bool = True

    def __post_init__(self):
        if self.mode not in INIT_MODES:
            raise ValueError(f"unknown init mode {self.mode!r}")
        if not (self.random_sd > 0 and self.spectral_scale > 0):
            raise ValueError("random_sd and spectral_scale must be positive")


class SpectralFailure(RuntimeError):
    pass


def random_init(n, d=2, cfg=InitConfig(mode="random")):
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(cfg.seed)
    return EmbeddingRecord(rng.normal(0.0, cfg.random_sd, size=(n, d)))


def _fix_signs(vecs):
    # make the largest-magnitude entry of every eigenvector positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def laplacian_eigs(adj, n_vecs):
    """Smallest ``n_vecs`` eigenpairs of ``I - S^-1/2 A S^-1/2`` for a connected graph."""
    m = adj.shape[0]
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    S = sp.diags(inv_sqrt)
    M = (S @ adj @ S).tocsr()
    n_vecs = min(n_vecs, m)
    if m <= DENSE_LIMIT or n_vecs >= m - 1:
        mu, vecs = np.linalg.eigh(M.toarray())
        order = np.argsort(-mu)[:n_vecs]
        mu, vecs = mu[order], vecs[:, order]
    else:
        v0 = np.sqrt(deg) / np.linalg.norm(np.sqrt(deg))
        try:
            mu, vecs = eigsh(M, k=n_vecs, which="LA", tol=0.0, v0=v0,
                             ncv=min(m, max(2 * n_vecs + 1, 24)), maxiter=10 * m)
        except ArpackNoConvergence as exc:
            raise SpectralFailure(f"eigensolver did not converge: {exc}") from None
        order = np.argsort(-mu)
        mu, vecs = mu[order], vecs[:, order]
    lam = 1.0 - mu
    L = sp.identity(m, format="csr") - M
    resid = np.linalg.norm(L @ vecs - vecs * lam, axis=0)
    return lam, _fix_signs(vecs), resid


def _component_layout(n_comp, d):
    side = int(np.ceil(np.sqrt(n_comp)))
    offsets = np.zeros((n_comp, d))
    for t in range(n_comp):
        if d == 1:
            offsets[t, 0] = 3.0 * t
        else:
            offsets[t, 0] = 3.0 * (t % side)
            offsets[t, 1] = 3.0 * (t // side)
    return offsets - offsets.mean(axis=0)


def spectral_init(g, d=2, cfg=InitConfig(), info=None):
    """Laplacian eigenmap of the affinity graph, rescaled to ``max|y| = spectral_scale``.

    Disconnected components are embedded separately and laid out on a grid.
    If the eigensolver fails, falls back to ``random_init`` and sets
    ``info["fallback"]``.
    """
    info = {} if info is None else info
    adj = g.to_csr().astype(np.float64)
    if not cfg.weighted:
        adj.data[:] = 1.0
    n = adj.shape[0]
    n_comp, comp = connected_components(adj, directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    ranked = np.lexsort((np.arange(n_comp), -sizes))
    offsets = _component_layout(n_comp, d)
    coords = np.zeros((n, d))
    eigvals, residuals = [], []
    try:
        for slot, c in enumerate(ranked):
            members = np.flatnonzero(comp == c)
            block = np.zeros((members.size, d))
            if members.size > 1:
                sub = adj[members][:, members]
                lam, vecs, resid = laplacian_eigs(sub, d + 1)
                if np.any(resid > RESIDUAL_TOL):
                    raise SpectralFailure(f"eigen residual {resid.max():.2e} exceeds {RESIDUAL_TOL}")
                take = vecs[:, 1:d + 1]
                block[:, : take.shape[1]] = take
                eigvals.append(lam[1:d + 1].tolist())
                residuals.append(float(resid.max()))
                peak = np.abs(block).max()
                if peak > 0:
                    block /= peak
            coords[members] = block + offsets[slot]
    except SpectralFailure as exc:
        warnings.warn(f"spectral init failed ({exc}); using random init", RuntimeWarning)
        info.update(fallback=True, reason=str(exc))
        return random_init(n, d, InitConfig(mode="random", seed=cfg.seed, random_sd=cfg.random_sd))
    peak = np.abs(coords).max()
    if peak > 0:
        coords *= cfg.spectral_scale / peak
    info.update(fallback=False, components=int(n_comp), eigenvalues=eigvals,
                max_residual=max(residuals) if residuals else 0.0)
    return EmbeddingRecord(coords)


def initialize(g, d, cfg, info=None):
    mode = cfg.mode
    if mode == "auto":
        mode = "spectral" if g.n < AUTO_SPECTRAL_MAX_N else "random"
    if mode == "random":
        return random_init(g.n, d, cfg)
    return spectral_init(g, d, cfg, info)
