"""Exit criteria 1-10. Each test prints one ``CRITERION n: PASS|FAIL`` line.

The lines are also collected and repeated in the pytest terminal summary.
MNIST checks use the bundled 5000-image subset (see README, "Data").
"""

import os
import time

import numpy as np
import pytest

from gdr import barnes_hut as bh
from gdr.affinity import (AffinityConfig, calibrate_rows, normalize_affinities)
from gdr.bench import base_deltas, bench, engine_config, sweep, sweep_table
from gdr.config import SWEEP_SWITCHES
from gdr.kernels import (GradientContext, KernelParams, dense_q, frob_cross_term, grad_pair,
                         total_loss)
from gdr.metrics import knn_accuracy, v_score
from gdr.optimizer import RunConfig, explicit_forces, init_state
from gdr.pipeline import generate, load_source, rerun, run_pipeline

from conftest import random_graph

pytestmark = pytest.mark.acceptance

LINES = []
VARIANTS = [("kl", False), ("kl", True), ("frobenius", False), ("frobenius", True)]
CACHE = os.environ.get("GDR_CACHE_DIR") or "/tmp/gdr-knn-cache"


def verdict(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def dense_forces(y, P, loss, normalized, kp):
    n = y.shape[0]
    Q, Z = dense_q(y, kp, normalized)
    ctx = GradientContext(normalized, loss, Z, n, frob_cross_term(P, Q) if normalized else 0.0)
    F = np.zeros_like(y)
    for i in range(n):
        for j in range(n):
            if i != j:
                F[i] += grad_pair(y[i], y[j], P[i, j], "attract", ctx, kp)
                F[i] += grad_pair(y[i], y[j], P[i, j], "repulse", ctx, kp)
    return F


def random_p(n, rng, normalized):
    C = np.zeros((n, n))
    for i in range(n):
        js = rng.choice(np.delete(np.arange(n), i), 6, replace=False)
        C[i, js] = rng.uniform(0.05, 1.0, 6)
    P = (C + C.T) / 2
    return P / P.sum() if normalized else P


# -- 1


def test_criterion_1_gradients_match_finite_differences():
    t0 = time.perf_counter()
    worst = {}
    h = 1e-5
    for loss, normalized in VARIANTS:
        kp = KernelParams(eps=1e-12)
        errs = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            y = rng.normal(size=(32, 2)) * rng.uniform(0.5, 3.0)
            P = random_p(32, rng, normalized)
            F = dense_forces(y, P, loss, normalized, kp)
            G = np.zeros_like(y)
            for i in range(32):
                for c in range(2):
                    yp, ym = y.copy(), y.copy()
                    yp[i, c] += h
                    ym[i, c] -= h
                    G[i, c] = (total_loss(yp, P, loss, normalized, kp)
                               - total_loss(ym, P, loss, normalized, kp)) / (2 * h)
            # coordinates whose true gradient is ~0 are compared against a 1e-3 floor
            scale = np.maximum(np.abs(G), 1e-3 * np.abs(G).max())
            errs.append(float((np.abs(F + G) / scale).max()))
        worst[f"{loss}{'-norm' if normalized else ''}"] = max(errs)
    dt = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and dt < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(1, ok, f"max rel err per coordinate: {detail}; {dt:.1f} s")


# -- 2


def test_criterion_2_exhaustive_sampling_oracle():
    t0 = time.perf_counter()
    worst = {}
    n = 40
    for loss, normalized in VARIANTS:
        errs = []
        for seed in range(3):
            g = random_graph(n, 5, seed=seed)
            if normalized:
                g = normalize_affinities(g)
            y = np.random.default_rng(seed).normal(size=(n, 2)) * 3
            # the exact derivative; the optimizer's default printed form is not a gradient
            cfg = RunConfig(normalized=normalized, loss=loss, neg_rate=n - 1, frob_form="exact")
            F = explicit_forces(init_state(g, y, cfg), g, cfg)
            D = dense_forces(y, g.dense(), loss, normalized, cfg.kernel)
            errs.append(float(np.abs(F - D).max() / np.abs(D).max()))
        worst[f"{loss}{'-norm' if normalized else ''}"] = max(errs)
    dt = time.perf_counter() - t0
    ok = all(v < 1e-6 for v in worst.values()) and dt < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(2, ok, f"max error / max force on n=40: {detail}; {dt:.1f} s")


# -- 3


def test_criterion_3_calibration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    k = 90
    d = np.sort(rng.uniform(0.1, 10.0, (10_000, k)) * rng.uniform(0.01, 100, (10_000, 1)), axis=1)
    _, _, P, _ = calibrate_rows(d, AffinityConfig("perplexity", perplexity=30.0,
                                                  pseudo_distance=False))
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.nansum(np.where(P > 0, P * np.log2(P), 0.0), axis=1)
    perp_err = float(np.abs(2 ** H - 30.0).max() / 30.0)
    d15 = d[:, :15]
    _, _, U, _ = calibrate_rows(d15, AffinityConfig("umap", pseudo_distance=True))
    umap_err = float(np.abs(U.sum(1) - np.log2(15)).max())
    nearest_one = bool(np.all(U[:, 0] == 1.0))
    dt = time.perf_counter() - t0
    ok = perp_err <= 1e-5 and umap_err <= 1e-5 and nearest_one and dt < 30
    verdict(3, ok, f"perplexity rel err {perp_err:.1e}, UMAP mass err {umap_err:.1e}, "
                   f"nearest p=1 on all rows: {nearest_one}; {dt:.1f} s")


# -- 4


def test_criterion_4_barnes_hut_fidelity():
    t0 = time.perf_counter()
    f_err, z_err, mono = [], [], True
    for seed in range(5):
        y = np.random.default_rng(seed).normal(size=(300, 2))
        D, Zd = bh.dense_repulsion(y)
        errs = []
        for theta in (0.8, 0.5, 0.2, 0.0):
            rs = bh.repulsion_sums(y, bh.build(y, theta))
            errs.append(np.linalg.norm(rs.U - D) / np.linalg.norm(D))
            if theta == 0.5:
                f_err.append(errs[-1])
                z_err.append(abs(rs.Z / Zd - 1))
        mono &= all(a > b for a, b in zip(errs, errs[1:]))
    dt = time.perf_counter() - t0
    ok = max(f_err) < 0.02 and max(z_err) < 0.01 and mono and dt < 10
    verdict(4, ok, f"theta=0.5 force err {max(f_err):.2%}, Z err {max(z_err):.2%}, "
                   f"monotone in theta: {mono}; {dt:.1f} s")


# -- 5 and 6 share one MNIST sweep


SEEDS = (0, 1, 2)
ENGINES = ("gdr", "gdr_normalized", "umap", "tsne")


@pytest.fixture(scope="module")
def mnist_sweep():
    os.environ.setdefault("GDR_CACHE_DIR", CACHE)
    data = load_source("mnist")
    t0 = time.perf_counter()
    cells = sweep(data, {e: engine_config(e) for e in ENGINES}, SWEEP_SWITCHES, SEEDS,
                  plot=False)
    return data, cells, time.perf_counter() - t0


def test_criterion_5_normalization_switch(mnist_sweep):
    data, cells, _ = mnist_sweep
    base = [c for c in cells if c.switch == "base"]

    def mean(engine, metric):
        return float(np.mean([getattr(c, metric) for c in base if c.engine == engine]))

    parts, ok = [], True
    for ours, ref in (("gdr_normalized", "tsne"), ("gdr", "umap")):
        dk = mean(ours, "knn_accuracy") - mean(ref, "knn_accuracy")
        dv = mean(ours, "v_score") - mean(ref, "v_score")
        ok &= abs(dk) <= 2.0 and abs(dv) <= 5.0
        parts.append(f"{ours} vs {ref}: kNN {mean(ours, 'knn_accuracy'):.1f}/"
                     f"{mean(ref, 'knn_accuracy'):.1f} ({dk:+.1f}), V {mean(ours, 'v_score'):.1f}/"
                     f"{mean(ref, 'v_score'):.1f} ({dv:+.1f})")
    verdict(5, ok, f"MNIST n={data.n}, {len(SEEDS)} seeds; " + "; ".join(parts))


def test_criterion_6_parameter_irrelevance(mnist_sweep):
    data, cells, dt = mnist_sweep
    deltas = base_deltas(cells, "knn_accuracy")
    bad = {k: v for k, v in deltas.items() if abs(v) > 3.0}
    print(sweep_table(cells, "knn_accuracy").format())
    worst = max(deltas.items(), key=lambda kv: abs(kv[1]))
    ok = not bad and dt < 30 * 60
    detail = ", ".join(f"{e}/{s} {v:+.1f}" for (e, s), v in bad.items()) or "none"
    verdict(6, ok, f"{len(deltas)} engine x switch deltas, worst {worst[0][0]}/{worst[0][1]} "
                   f"{worst[1]:+.1f}; over 3 points: {detail}; sweep {dt / 60:.1f} min")


# -- 7


def test_criterion_7_speed_ordering():
    os.environ.setdefault("GDR_CACHE_DIR", CACHE)
    data = load_source("mnist")
    # 60k proxy: the 5k subset upsampled with jittered copies (README, "Data")
    rows = bench(data, "n", [60_000], engines=ENGINES, epochs=500, seed=0, knn="nn_descent")
    t = {r["engine"]: r["optimize_ms"] / 1e3 for r in rows}
    r_umap = t["gdr"] / t["umap"]
    r_bh = t["tsne"] / t["gdr_normalized"]
    ok = r_umap <= 1.1 and r_bh >= 5.0
    verdict(7, ok, "optimize s at n=60000 (upsampled proxy): "
                   + ", ".join(f"{k} {v:.1f}" for k, v in t.items())
                   + f"; gdr/umap {r_umap:.2f} (<= 1.1), tsne/gdr_normalized {r_bh:.1f} (>= 5)")


# -- 8


def test_criterion_8_angle_agreement():
    t0 = time.perf_counter()
    worst = {}
    for spec in ("blobs:n=2000,c=5,dim=10", "swiss_roll:n=5000"):
        data = generate(spec)
        cfg = engine_config("gdr_normalized", angle_every=10, loss_every=0)
        _, rep = run_pipeline(data, cfg, metrics=False, plot=False)
        angles = rep.info["angles"]
        worst[spec.split(":")[0]] = (max(angles), len(angles))
    dt = time.perf_counter() - t0
    ok = all(a < np.pi / 2 for a, _ in worst.values()) and dt < 300
    detail = ", ".join(f"{k} max {a:.2f} rad over {m} epochs" for k, (a, m) in worst.items())
    verdict(8, ok, f"{detail} (pi/2 = 1.57); {dt:.0f} s")


# -- 9


def test_criterion_9_metric_oracles():
    y = np.repeat([0, 1, 2], 10)
    perfect = v_score(y, y) == (1.0, 1.0, 1.0)
    h, c, v = v_score(y, np.zeros(30))
    single = (h, c, v) == (0.0, 1.0, 0.5)
    rng = np.random.default_rng(0)
    chance = knn_accuracy(rng.normal(size=(4000, 2)), rng.integers(0, 2, 4000), k=100)
    x = rng.uniform(size=(500, 2))
    lab = rng.integers(0, 3, 500)
    R = np.array([[np.cos(1.1), -np.sin(1.1)], [np.sin(1.1), np.cos(1.1)]])
    rot = knn_accuracy(x, lab, 15) == knn_accuracy(x @ R.T + 5.0, lab, 15)
    ok = perfect and single and abs(chance - 50) <= 5 and rot
    verdict(9, ok, f"perfect {perfect}, single cluster (h, c, v)=({h:.0f}, {c:.0f}, {v:.1f}), "
                   f"chance {chance:.1f}%, rotation invariant {rot}")


# -- 10


def test_criterion_10_reproducibility(tmp_path):
    same = {}
    src = {"generator": "blobs:n=500,c=4,dim=10,seed=3"}
    for e in ENGINES:
        a_dir, b_dir = tmp_path / f"{e}_a", tmp_path / f"{e}_b"
        cfg = engine_config(e)
        _, rep = run_pipeline(load_source(**src), cfg, out_dir=a_dir, source=src)
        rerun(rep.artifacts["report"], out_dir=b_dir)
        same[e] = all((a_dir / p.name).read_bytes() == p.read_bytes()
                      for p in b_dir.iterdir() if p.suffix in (".csv", ".svg"))
    ok = all(same.values())
    verdict(10, ok, "bitwise-identical re-runs from RunReport: "
                    + ", ".join(f"{k} {v}" for k, v in same.items()))
