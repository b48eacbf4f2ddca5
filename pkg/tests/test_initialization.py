import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gdr.affinity import symmetrize
from gdr.initialization import (InitConfig, initialize, laplacian_eigs, random_init,
                                spectral_init)

from conftest import random_graph


def graph_from_edges(n, edges):
    idx, cond = [], []
    for i in range(n):
        nb = [j for a, j in edges if a == i] + [a for a, j in edges if j == i]
        idx.append(nb)
        cond.append([1.0] * len(nb))
    k = max(len(r) for r in idx)
    I = np.array([r + [r[0]] * (k - len(r)) for r in idx])
    C = np.array([c + [0.0] * (k - len(c)) for c in cond])
    return symmetrize(I, C, "average")


def test_random_init_determinism_and_shape():
    cfg = InitConfig("random", seed=7)
    a, b = random_init(50, 2, cfg), random_init(50, 2, cfg)
    np.testing.assert_array_equal(a.coords, b.coords)
    assert a.coords.shape == (50, 2)


def test_random_init_mean():
    cfg = InitConfig("random", seed=1)
    y = random_init(10_000, 2, cfg).coords
    assert np.all(np.abs(y.mean(axis=0)) < 5 * cfg.random_sd / np.sqrt(10_000))


def test_four_cycle_eigenvalues():
    g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    lam, vecs, resid = laplacian_eigs(g.to_csr(), 3)
    np.testing.assert_allclose(lam, [0.0, 1.0, 1.0], atol=1e-12)
    dense = np.linalg.eigvalsh(np.eye(4) - g.dense() / 2.0)
    np.testing.assert_allclose(lam, np.sort(dense)[:3], atol=1e-12)
    assert resid.max() < 1e-10


def test_two_cliques_distinct_offsets():
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    y = spectral_init(graph_from_edges(6, edges), 2).coords
    c1, c2 = y[:3].mean(axis=0), y[3:].mean(axis=0)
    assert np.linalg.norm(c1 - c2) > 1.0


def test_spectral_scale_and_orthogonality():
    g = random_graph(150, k=6, seed=2)
    info = {}
    y = spectral_init(g, 2, InitConfig(), info).coords
    assert np.abs(y).max() == pytest.approx(10.0, abs=1e-12)
    assert info["components"] == 1 and info["max_residual"] <= 1e-6
    deg = np.asarray(g.to_csr().sum(axis=1)).ravel()
    # eigenvectors of the normalized Laplacian are S^1/2-orthogonal to sqrt(deg)
    lam, vecs, _ = laplacian_eigs(g.to_csr(), 3)
    trivial = np.sqrt(deg) / np.linalg.norm(np.sqrt(deg))
    assert np.abs(trivial @ vecs[:, 1:]).max() < 1e-6


@given(st.integers(20, 200), st.integers(0, 500))
@settings(max_examples=15, deadline=None)
def test_iterative_solver_matches_dense(n, seed):
    import gdr.initialization as init

    g = random_graph(n, k=4, seed=seed)
    adj = g.to_csr()
    from scipy.sparse.csgraph import connected_components

    if connected_components(adj)[0] != 1:
        return
    dense_lam = laplacian_eigs(adj, 3)[0]
    old = init.DENSE_LIMIT
    try:
        init.DENSE_LIMIT = 0
        iter_lam = laplacian_eigs(adj, 3)[0]
    finally:
        init.DENSE_LIMIT = old
    np.testing.assert_allclose(iter_lam, dense_lam, atol=1e-6)


def test_auto_mode_threshold():
    g = random_graph(40)
    y = initialize(g, 2, InitConfig("auto"))
    assert np.abs(y.coords).max() == pytest.approx(10.0)


def test_bad_config():
    with pytest.raises(ValueError):
        InitConfig("pca")
    with pytest.raises(ValueError):
        InitConfig(random_sd=0.0)
