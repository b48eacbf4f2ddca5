"""The epoch loop: attraction over kNN edges, sampled or tree-based repulsion.

Three inner loops share one set of force terms (``_forces``):

* ``explicit``: every directed edge is processed each epoch; forces are
  weighted by ``p_ij`` and ``neg_rate`` uniform partners are drawn per edge.
* ``scalar_sampling``: edges fire on an epochs-per-sample schedule with
  unweighted forces, as in reference UMAP.
* ``barnes_hut``: exact attraction plus quadtree repulsion, as in BH-TSNE.

Forces are collected into a buffer and applied after the loop (optionally
with momentum and gains) or applied immediately per pair (``in_loop``).
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np
from numba import njit, prange

from . import barnes_hut as bh
from ._forces import (
    FROB_UNNORM, KL_UNNORM, attract_final, attract_terms, clip_value, combine_forces,
    draw_partner, force_mode, is_normalized_mode, repulse_final, repulse_terms,
)
from ._rng import rand_below
from .data_io import EmbeddingRecord
from .kernels import LOG_CLAMP, KernelParams, kernel

SAMPLINGS = ("explicit", "scalar_sampling", "barnes_hut")
APPLIES = ("collected", "in_loop")
LR_SCHEDULES = ("constant", "linear_decay")
DIVERGENCE_LIMIT = 1e6
EXHAUSTIVE_BH_FALLBACK_MAX_N = 5000
# base lr of normalized mode before the n/k scaling; 1.0 is unstable with one
# sampled repulsion per edge (see README, "Normalized GDR")
NORMALIZED_LR = 0.5
# collected forces are full ordered-pair gradients, twice UMAP's per-firing
# coefficient; 0.5 gives the same step per edge
UNNORMALIZED_EXPLICIT_LR = 0.5


class DivergenceError(FloatingPointError):
    def __init__(self, epoch, reason):
        super().__init__(f"optimization diverged at epoch {epoch}: {reason}")
        self.epoch = epoch
        self.reason = reason


@dataclass
class RunConfig:
    """Optimizer switches. ``None`` fields are resolved from the others on construction."""

    normalized: bool = False
    loss: str = "kl"
    sampling: str = "explicit"
    apply: str = "collected"
    amplification: bool | None = None
    sym_attraction: bool = False
    lr: float | None = None
    lr_schedule: str | None = None
    epochs: int = 500
    neg_rate: int | None = None
    clip: float | None = None
    seed: int = 0
    kernel: KernelParams = field(default_factory=KernelParams)
    override_coupling: bool = False
    # neighbors-per-point k in the n/k learning-rate scaling of normalized mode
    lr_k: int | None = None
    theta: float = 0.5
    # the printed normalized-Frobenius force reproduces KL-like embeddings; "exact"
    # is the true gradient (see README, "Frobenius")
    frob_form: str = "printed"
    # normalized Frobenius forces are O(q) times the KL ones; scale their step by Z
    frob_precondition: bool = True
    exaggeration: float = 1.0
    exaggeration_epochs: int = 250
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    gain_floor: float = 0.01
    workers: int = 1
    loss_every: int = 1
    loss_samples: int = 4096
    angle_every: int = 0
    angle_samples: int = 200

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = KernelParams(**self.kernel)
        if self.amplification is None:
            self.amplification = self.normalized
        if self.lr is None:
            if self.normalized:
                self.lr = NORMALIZED_LR
            elif self.sampling == "scalar_sampling":
                self.lr = 1.0
            else:
                self.lr = UNNORMALIZED_EXPLICIT_LR
        if self.lr_schedule is None:
            self.lr_schedule = "constant" if self.normalized else "linear_decay"
        if self.neg_rate is None:
            self.neg_rate = 5 if self.sampling == "scalar_sampling" else 1
        if self.clip is None and self.sampling == "scalar_sampling":
            self.clip = 4.0
        self.validate()

    def validate(self):
        def bad(msg):
            raise ValueError(msg)

        if self.loss not in ("kl", "frobenius"):
            bad(f"unknown loss {self.loss!r}")
        if self.sampling not in SAMPLINGS:
            bad(f"unknown sampling {self.sampling!r}")
        if self.apply not in APPLIES:
            bad(f"unknown apply {self.apply!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            bad(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.frob_form not in ("exact", "printed"):
            bad(f"unknown frob_form {self.frob_form!r}")
        if self.epochs < 1:
            bad("epochs must be >= 1")
        if self.neg_rate < 0:
            bad("neg_rate must be >= 0")
        if not self.lr > 0:
            bad("lr must be positive")
        if self.clip is not None and not self.clip > 0:
            bad("clip must be positive when set")
        if self.workers < 1:
            bad("workers must be >= 1")
        if self.sampling == "scalar_sampling" and self.normalized:
            bad("scalar_sampling supports unnormalized mode only (conflict: sampling / normalized)")
        if self.amplification and self.apply != "collected":
            bad("amplification requires apply=collected (conflict: amplification / apply=in_loop)")
        if self.amplification != self.normalized and not self.override_coupling:
            bad("normalized and amplification must agree unless override_coupling is set "
                f"(conflict: normalized={self.normalized} / amplification={self.amplification})")
        if self.sampling == "barnes_hut" and self.apply != "collected":
            bad("barnes_hut repulsion requires apply=collected (conflict: sampling / apply)")
        if self.lr_k is not None and self.lr_k < 1:
            bad("lr_k must be >= 1")

    def snapshot(self):
        d = asdict(self)
        d["kernel"] = asdict(self.kernel)
        return d


@dataclass
class OptimizerState:
    y: np.ndarray
    velocity: np.ndarray
    gains: np.ndarray
    epoch: int = 0
    Z_estimate: float = 1.0
    cross: float = 0.0
    momentum: float = 0.5
    # scalar-sampling schedule, one entry per directed edge
    epochs_per_sample: np.ndarray | None = None
    next_sample: np.ndarray | None = None
    epochs_per_negative: np.ndarray | None = None
    next_negative: np.ndarray | None = None
    fires: np.ndarray | None = None
    summarized: int = 0
    pairs: int = 0


@dataclass
class LossTrace:
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    Z: list = field(default_factory=list)
    angle: list = field(default_factory=list)

    def records(self):
        keys = ("epoch", "lr", "loss", "wall_ms", "Z", "angle")
        return [dict(zip(keys, row)) for row in zip(*(getattr(self, k) for k in keys))]


# ---------------------------------------------------------------- numba loops

def _explicit_collected(y, indptr, indices, weights, neg_rate, exhaustive, seed, epoch,
                        mode, pbar, a, b, eps, clip, attr_mult, sym_mult):
    n, d = y.shape
    att_u = np.zeros((n, d))
    att_v = np.zeros((n, d))
    rep_u = np.zeros((n, d))
    rep_v = np.zeros((n, d))
    z = np.zeros(n)
    z2 = np.zeros(n)
    m = np.zeros(n)
    pw = np.zeros(n)
    fa = attract_final(mode, 1.0, 0.0, 1.0)
    fr = repulse_final(mode, 1.0, 0.0, 1.0, 0.0)
    do_clip = clip > 0.0 and (mode == KL_UNNORM or mode == FROB_UNNORM)
    for i in prange(n):
        diff = np.empty(d)
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            s = 0.0
            for c in range(d):
                diff[c] = y[i, c] - y[j, c]
                s += diff[c] * diff[c]
            tu, tv = attract_terms(mode, s, weights[e] * attr_mult, a, b)
            pw[i] += weights[e] * kernel(s, a, b)
            for c in range(d):
                au = tu * diff[c]
                if do_clip:
                    au = clip_value(fa * au, clip) / fa
                att_u[i, c] += sym_mult * au
                att_v[i, c] += sym_mult * tv * diff[c]
            if exhaustive:
                continue
            for r in range(neg_rate):
                k = draw_partner(seed, epoch, e, r, n, i)
                s = 0.0
                for c in range(d):
                    diff[c] = y[i, c] - y[k, c]
                    s += diff[c] * diff[c]
                tu, tv, w = repulse_terms(mode, s, pbar, a, b, eps)
                for c in range(d):
                    ru = tu * diff[c]
                    if do_clip:
                        ru = clip_value(fr * ru, clip) / fr
                    rep_u[i, c] += ru
                    rep_v[i, c] += tv * diff[c]
                z[i] += w
                z2[i] += w * w
                m[i] += 1.0
        if exhaustive:
            ptr = indptr[i]
            stop = indptr[i + 1]
            for k in range(n):
                if k == i:
                    continue
                while ptr < stop and indices[ptr] < k:
                    ptr += 1
                pk = weights[ptr] if ptr < stop and indices[ptr] == k else 0.0
                s = 0.0
                for c in range(d):
                    diff[c] = y[i, c] - y[k, c]
                    s += diff[c] * diff[c]
                tu, tv, w = repulse_terms(mode, s, pk, a, b, eps)
                for c in range(d):
                    ru = tu * diff[c]
                    if do_clip:
                        ru = clip_value(fr * ru, clip) / fr
                    rep_u[i, c] += ru
                    rep_v[i, c] += tv * diff[c]
                z[i] += w
                z2[i] += w * w
                m[i] += 1.0
    return att_u, att_v, rep_u, rep_v, z, z2, m, pw


def _explicit_in_loop(y, indptr, indices, weights, neg_rate, exhaustive, seed, epoch,
                      mode, pbar, a, b, eps, clip, attr_mult, sym, lr, Z, cross, normalized):
    n, d = y.shape
    z = np.zeros(n)
    z2 = np.zeros(n)
    m = np.zeros(n)
    pw = np.zeros(n)
    for i in prange(n):
        diff = np.empty(d)
        deg = indptr[i + 1] - indptr[i]
        scale = 1.0
        if normalized and not exhaustive and neg_rate > 0 and deg > 0:
            scale = (n - 1.0) / (neg_rate * deg)
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            s = 0.0
            for c in range(d):
                diff[c] = y[i, c] - y[j, c]
                s += diff[c] * diff[c]
            tu, tv = attract_terms(mode, s, weights[e] * attr_mult, a, b)
            pw[i] += weights[e] * kernel(s, a, b)
            coef = attract_final(mode, tu, tv, Z)
            for c in range(d):
                f = coef * diff[c]
                if clip > 0.0:
                    f = clip_value(f, clip)
                y[i, c] += lr * f
                if sym:
                    y[j, c] -= lr * f
            if exhaustive:
                continue
            for r in range(neg_rate):
                k = draw_partner(seed, epoch, e, r, n, i)
                s = 0.0
                for c in range(d):
                    diff[c] = y[i, c] - y[k, c]
                    s += diff[c] * diff[c]
                tu, tv, w = repulse_terms(mode, s, pbar, a, b, eps)
                coef = repulse_final(mode, tu, tv, Z, cross) * scale
                for c in range(d):
                    f = coef * diff[c]
                    if clip > 0.0:
                        f = clip_value(f, clip)
                    y[i, c] += lr * f
                z[i] += w
                z2[i] += w * w
                m[i] += 1.0
        if exhaustive:
            ptr = indptr[i]
            stop = indptr[i + 1]
            for k in range(n):
                if k == i:
                    continue
                while ptr < stop and indices[ptr] < k:
                    ptr += 1
                pk = weights[ptr] if ptr < stop and indices[ptr] == k else 0.0
                s = 0.0
                for c in range(d):
                    diff[c] = y[i, c] - y[k, c]
                    s += diff[c] * diff[c]
                tu, tv, w = repulse_terms(mode, s, pk, a, b, eps)
                coef = repulse_final(mode, tu, tv, Z, cross)
                for c in range(d):
                    f = coef * diff[c]
                    if clip > 0.0:
                        f = clip_value(f, clip)
                    y[i, c] += lr * f
                z[i] += w
                z2[i] += w * w
                m[i] += 1.0
    return z, z2, m, pw


def _scalar_epoch(y, heads, indices, eps_ps, next_s, eps_neg, next_neg, fires, t, seed,
                  mode, a, b, eps, clip, lr, sym, collected, buf):
    n, d = y.shape
    # reference UMAP coefficients are half the per-ordered-pair gradient
    fa = 0.5 * attract_final(mode, 1.0, 0.0, 1.0)
    fr = 0.5 * repulse_final(mode, 1.0, 0.0, 1.0, 0.0)
    for e in prange(heads.shape[0]):
        if next_s[e] > t:
            continue
        i = heads[e]
        j = indices[e]
        diff = np.empty(d)
        s = 0.0
        for c in range(d):
            diff[c] = y[i, c] - y[j, c]
            s += diff[c] * diff[c]
        tu, tv = attract_terms(mode, s, 1.0, a, b)
        for c in range(d):
            f = fa * tu * diff[c]
            if clip > 0.0:
                f = clip_value(f, clip)
            if collected:
                buf[i, c] += f
                if sym:
                    buf[j, c] -= f
            else:
                y[i, c] += lr * f
                if sym:
                    y[j, c] -= lr * f
        next_s[e] += eps_ps[e]
        fires[e] += 1
        n_neg = 0
        if eps_neg[e] > 0.0:
            n_neg = int((t - next_neg[e]) / eps_neg[e])
            if n_neg < 0:
                n_neg = 0
        for r in range(n_neg):
            k = draw_partner(seed, t, e, r, n, i)
            s = 0.0
            for c in range(d):
                diff[c] = y[i, c] - y[k, c]
                s += diff[c] * diff[c]
            tu, tv, w = repulse_terms(mode, s, 0.0, a, b, eps)
            for c in range(d):
                f = fr * tu * diff[c]
                if clip > 0.0:
                    f = clip_value(f, clip)
                if collected:
                    buf[i, c] += f
                else:
                    y[i, c] += lr * f
        next_neg[e] += n_neg * eps_neg[e]


@njit(cache=True)
def _pair_loss(mode, p, w, Z):
    """Loss of one ordered pair with affinity ``p`` and kernel value ``w``."""
    normalized = mode == 0 or mode == 2 or mode == 4
    q = w / Z if normalized else w
    if mode == 0 or mode == 1:
        qc = min(max(q, LOG_CLAMP), 1.0 - LOG_CLAMP)
        out = 0.0
        if p > 0.0:
            out += p * np.log(p / qc)
        if mode == 1 and p < 1.0:
            out += (1.0 - p) * np.log((1.0 - p) / (1.0 - qc))
        return out
    return (p - q) * (p - q)


@njit(cache=True)
def _row_lookup(indptr, indices, weights, i, k):
    lo = indptr[i]
    hi = indptr[i + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < k:
            lo = mid + 1
        else:
            hi = mid
    if lo < indptr[i + 1] and indices[lo] == k:
        return lo
    return -1


@njit(cache=True)
def _sq(y, i, k, a, b):
    s = 0.0
    for c in range(y.shape[1]):
        t = y[i, c] - y[k, c]
        s += t * t
    return kernel(s, a, b)


@njit(cache=True)
def _loss_exhaustive(y, indptr, indices, weights, mode, a, b):
    n = y.shape[0]
    Z = 0.0
    for i in range(n):
        for k in range(n):
            if k != i:
                Z += _sq(y, i, k, a, b)
    total = 0.0
    for i in range(n):
        for k in range(n):
            if k == i:
                continue
            e = _row_lookup(indptr, indices, weights, i, k)
            p = weights[e] if e >= 0 else 0.0
            total += _pair_loss(mode, p, _sq(y, i, k, a, b), Z)
    return total


@njit(cache=True)
def _loss_sampled(y, heads, indptr, indices, weights, mode, a, b, Z, m_edges, m_pairs,
                  seed, epoch):
    n = y.shape[0]
    n_dir = heads.shape[0]
    edge_part = 0.0
    for t in range(m_edges):
        e = rand_below(seed, 11, epoch, t, n_dir)
        edge_part += _pair_loss(mode, weights[e], _sq(y, heads[e], indices[e], a, b), Z)
    edge_part *= n_dir / m_edges
    rest = 0.0
    for t in range(m_pairs):
        i = rand_below(seed, 12, epoch, t, n)
        k = draw_partner(seed, 13 + epoch, t, 0, n, i)
        if _row_lookup(indptr, indices, weights, i, k) >= 0:
            continue
        rest += _pair_loss(mode, 0.0, _sq(y, i, k, a, b), Z)
    rest *= n * (n - 1.0) / m_pairs
    return edge_part + rest


_serial = {}
_parallel = {}
_BODIES = {
    "explicit_collected": _explicit_collected,
    "explicit_in_loop": _explicit_in_loop,
    "scalar_epoch": _scalar_epoch,
}
for _name, _fn in _BODIES.items():
    _serial[_name] = njit(cache=True)(_fn)


def _kernel_fn(name, workers):
    if workers <= 1:
        return _serial[name]
    if name not in _parallel:
        _parallel[name] = njit(parallel=True)(_BODIES[name])
    return _parallel[name]


# ---------------------------------------------------------------- helpers

def _mode(cfg):
    return force_mode(cfg.loss, cfg.normalized, cfg.frob_form)


def _lr_k(g, cfg):
    if cfg.lr_k is not None:
        return cfg.lr_k
    # fall back to the mean symmetrized degree when the kNN k is unknown
    return max(1, int(round(g.n_directed / max(g.n, 1))))


def effective_lr(cfg, epoch, n, k):
    """Learning rate used at 0-based ``epoch``; normalized mode scales by ``n / k``."""
    lr = cfg.lr
    if cfg.lr_schedule == "linear_decay":
        lr *= 1.0 - epoch / cfg.epochs
    if cfg.normalized:
        lr *= n / k
    return lr


def firing_counts(weights, epochs):
    """Analytic number of firings per edge under the epochs-per-sample schedule."""
    w = np.asarray(weights, dtype=np.float64)
    eps = w.max() / w
    return np.floor(epochs / eps + 1e-9).astype(np.int64)


def initial_Z(y, kp, seed, n_pairs=None):
    """Kernel mass estimate from ``10 n`` uniformly sampled ordered pairs."""
    n = y.shape[0]
    m = 10 * n if n_pairs is None else n_pairs
    rng = np.random.default_rng([seed, 0x5A])
    i = rng.integers(0, n, m)
    k = rng.integers(0, n - 1, m)
    k = k + (k >= i)
    s = np.sum((y[i] - y[k]) ** 2, axis=1)
    w = 1.0 / (1.0 + kp.a * s ** kp.b)
    return float(n * (n - 1) / m * w.sum())


def init_state(g, y0, cfg):
    y = np.array(getattr(y0, "coords", y0), dtype=np.float64, order="C")
    if y.ndim != 2 or y.shape[0] != g.n:
        raise ValueError(f"y0 has {y.shape[0]} rows but the graph has {g.n} points")
    if not np.all(np.isfinite(y)):
        raise ValueError("y0 contains non-finite coordinates")
    st = OptimizerState(y, np.zeros_like(y), np.ones_like(y),
                        Z_estimate=initial_Z(y, cfg.kernel, cfg.seed), momentum=cfg.momentum_start)
    if cfg.sampling == "scalar_sampling":
        w = g.weights
        eps = w.max() / w
        st.epochs_per_sample = eps
        st.next_sample = eps.copy()
        if cfg.neg_rate > 0:
            st.epochs_per_negative = eps / cfg.neg_rate
        else:
            st.epochs_per_negative = np.zeros_like(eps)
        st.next_negative = st.epochs_per_negative.copy()
        st.fires = np.zeros(w.shape[0], dtype=np.int64)
    return st


def _attr_mult(cfg, epoch):
    return cfg.exaggeration if epoch < cfg.exaggeration_epochs else 1.0


def _finish_normalized(st, mode, z, z2, m, pw, scale):
    """Refresh Z and the Frobenius cross term from one epoch's samples."""
    Z = float(np.sum(scale * z))
    if not Z > 0 or not np.isfinite(Z):
        Z = st.Z_estimate
    sum_q2 = float(np.sum(scale * z2)) / (Z * Z)
    cross = float(pw.sum()) / Z - sum_q2
    st.Z_estimate = Z
    st.cross = cross
    return Z, cross


def apply_plain(force, st, lr, clip=None):
    if clip is not None:
        force = np.clip(force, -clip, clip)
    st.y += lr * force


def apply_amplified(force, st, cfg, lr):
    """Momentum + gains update; ``force`` is the negative gradient."""
    grad = -force
    st.momentum = cfg.momentum_start if st.epoch < cfg.momentum_switch else cfg.momentum_final
    flip = np.sign(grad) != np.sign(st.velocity)
    st.gains = np.where(flip, st.gains + 0.2, st.gains * 0.8)
    np.maximum(st.gains, cfg.gain_floor, out=st.gains)
    st.velocity = st.momentum * st.velocity - lr * st.gains * grad
    st.y += st.velocity


def _apply_collected(force, st, cfg, lr):
    if cfg.clip is not None and cfg.normalized:
        # unnormalized forces are already clipped per pair
        force = np.clip(force, -cfg.clip, cfg.clip)
    if cfg.amplification:
        apply_amplified(force, st, cfg, lr)
    else:
        st.y += lr * force


def _exhaustive(cfg, n):
    return cfg.neg_rate >= n - 1


def explicit_forces(st, g, cfg, exhaustive=None):
    """Collected explicit-mode force on every point for the current epoch.

    Also refreshes ``st.Z_estimate`` and the Frobenius cross term.
    """
    n = g.n
    mode = _mode(cfg)
    kp = cfg.kernel
    ex = _exhaustive(cfg, n) if exhaustive is None else exhaustive
    fn = _kernel_fn("explicit_collected", cfg.workers)
    sym_mult = 2.0 if cfg.sym_attraction else 1.0
    att_u, att_v, rep_u, rep_v, z, z2, m, pw = fn(
        st.y, g.indptr, g.indices, g.weights, cfg.neg_rate, ex, np.uint64(cfg.seed), st.epoch,
        mode, g.mean_p, kp.a, kp.b, kp.eps, cfg.clip or 0.0, _attr_mult(cfg, st.epoch), sym_mult)
    if is_normalized_mode(mode):
        scale = np.divide(n - 1.0, m, out=np.zeros(n), where=m > 0)
        Z, cross = _finish_normalized(st, mode, z, z2, m, pw, scale)
    else:
        scale = np.ones(n)
        Z, cross = 1.0, 0.0
        msum = m.sum()
        if msum > 0:
            st.Z_estimate = float(n * (n - 1) / msum * z.sum())
    fa, fr = combine_forces(mode, att_u, att_v, rep_u, rep_v, scale, Z, cross)
    return fa + fr


def epoch_explicit(st, g, cfg, lr):
    """One GDR epoch. Returns the collected force (``None`` for in-loop updates)."""
    if cfg.apply == "collected":
        force = explicit_forces(st, g, cfg)
        _apply_collected(force, st, cfg, lr)
        return force
    mode = _mode(cfg)
    kp = cfg.kernel
    n = g.n
    ex = _exhaustive(cfg, n)
    fn = _kernel_fn("explicit_in_loop", cfg.workers)
    z, z2, m, pw = fn(st.y, g.indptr, g.indices, g.weights, cfg.neg_rate, ex, np.uint64(cfg.seed),
                      st.epoch, mode, g.mean_p, kp.a, kp.b, kp.eps, cfg.clip or 0.0,
                      _attr_mult(cfg, st.epoch), cfg.sym_attraction, lr, st.Z_estimate,
                      st.cross, cfg.normalized)
    if cfg.normalized:
        scale = np.divide(n - 1.0, m, out=np.zeros(n), where=m > 0)
        _finish_normalized(st, mode, z, z2, m, pw, scale)
    return None


def epoch_scalar_sampling(st, g, cfg, lr):
    mode = _mode(cfg)
    kp = cfg.kernel
    collected = cfg.apply == "collected"
    buf = np.zeros_like(st.y) if collected else np.zeros((1, st.y.shape[1]))
    fn = _kernel_fn("scalar_epoch", cfg.workers)
    fn(st.y, _heads(g), g.indices, st.epochs_per_sample, st.next_sample,
       st.epochs_per_negative, st.next_negative, st.fires, float(st.epoch + 1),
       np.uint64(cfg.seed), mode, kp.a, kp.b, kp.eps, cfg.clip or 0.0, lr,
       cfg.sym_attraction, collected, buf)
    if collected:
        st.y += lr * buf
        return buf
    return None


def _heads(g):
    h = getattr(g, "_heads_cache", None)
    if h is None:
        h = g.heads()
        g._heads_cache = h
    return h


def epoch_barnes_hut(st, g, cfg, lr):
    """Exact attraction plus quadtree repulsion over all ``n - 1`` partners."""
    n = g.n
    mode = _mode(cfg)
    kp = cfg.kernel
    fn = _kernel_fn("explicit_collected", cfg.workers)
    sym_mult = 2.0 if cfg.sym_attraction else 1.0
    att_u, att_v, _, _, _, _, _, pw = fn(
        st.y, g.indptr, g.indices, g.weights, 0, False, np.uint64(cfg.seed), st.epoch,
        mode, g.mean_p, kp.a, kp.b, kp.eps, cfg.clip or 0.0, _attr_mult(cfg, st.epoch), sym_mult)
    tree = bh.build(st.y, cfg.theta)
    rs = bh.repulsion_sums(st.y, tree, mode, g.mean_p, kp.a, kp.b, kp.eps, cfg.workers)
    st.summarized += rs.summarized
    st.pairs += rs.pairs
    ones = np.ones(n)
    if is_normalized_mode(mode):
        Z, cross = _finish_normalized(st, mode, rs.z, rs.z2, None, pw, ones)
    else:
        Z, cross = 1.0, 0.0
        st.Z_estimate = rs.Z
    fa, fr = combine_forces(mode, att_u, att_v, rs.U, rs.V, ones, Z, cross)
    force = fa + fr
    _apply_collected(force, st, cfg, lr)
    return force


def loss_trace_sample(y, g, cfg, m, epoch=0, Z=None):
    """Sampled estimate of the configured loss.

    Half of the ``m`` pair budget samples directed edges (scaled to all
    edges), half samples uniform ordered pairs and keeps the non-edges
    (scaled to all pairs). With ``m >= n(n-1)`` the loss is computed exactly
    over every ordered pair, with the exact Z.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    y = np.ascontiguousarray(getattr(y, "coords", y), dtype=np.float64)
    n = y.shape[0]
    mode = _mode(cfg)
    kp = cfg.kernel
    if m >= n * (n - 1):
        return float(_loss_exhaustive(y, g.indptr, g.indices, g.weights, mode, kp.a, kp.b))
    if Z is None:
        Z = initial_Z(y, kp, cfg.seed + epoch)
    m_edges = max(1, m // 2)
    m_pairs = max(1, m - m_edges)
    return float(_loss_sampled(y, _heads(g), g.indptr, g.indices, g.weights, mode, kp.a, kp.b,
                               Z, m_edges, m_pairs, np.uint64(cfg.seed), epoch))


def _check_finite(y, epoch):
    peak = np.abs(y).max()
    if not np.isfinite(peak):
        raise DivergenceError(epoch, "non-finite coordinate")
    if peak > DIVERGENCE_LIMIT:
        raise DivergenceError(epoch, f"|y| reached {peak:.3g} > {DIVERGENCE_LIMIT:g}")


def _resolve_engine(g, y, cfg):
    """Barnes-Hut is 2-D only; small higher-d runs fall back to exhaustive repulsion."""
    if cfg.sampling != "barnes_hut" or y.shape[1] == 2:
        return cfg
    if g.n > EXHAUSTIVE_BH_FALLBACK_MAX_N:
        raise ValueError(f"Barnes-Hut supports d=2 only; d={y.shape[1]} with n={g.n} "
                         f"exceeds the exhaustive fallback limit {EXHAUSTIVE_BH_FALLBACK_MAX_N}")
    warnings.warn("Barnes-Hut is 2-D only; using exhaustive repulsion", RuntimeWarning)
    return replace(cfg, sampling="explicit", neg_rate=g.n - 1)


def _set_threads(workers):
    if workers <= 1:
        # serial kernels never start the thread pool
        return
    numba.set_num_threads(max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))


def run(g, y0, cfg, trace_path=None, info=None):
    """Optimize ``y0`` against the affinity graph ``g``.

    Returns the final ``EmbeddingRecord`` and a ``LossTrace``. Raises
    ``DivergenceError`` if any coordinate becomes non-finite or exceeds 1e6.
    """
    cfg.validate()
    if cfg.normalized and not g.normalized:
        from .affinity import normalize_affinities
        g = normalize_affinities(g)
    elif g.normalized and not cfg.normalized:
        raise ValueError("graph is normalized but the run config is unnormalized")
    st = init_state(g, y0, cfg)
    cfg = _resolve_engine(g, st.y, cfg)
    _set_threads(cfg.workers)
    n = g.n
    k = _lr_k(g, cfg)
    step = {"explicit": epoch_explicit, "scalar_sampling": epoch_scalar_sampling,
            "barnes_hut": epoch_barnes_hut}[cfg.sampling]
    trace = LossTrace()
    fh = open(trace_path, "w") if trace_path else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            st.epoch = epoch
            lr = effective_lr(cfg, epoch, n, k)
            if cfg.frob_precondition and cfg.normalized and cfg.loss == "frobenius":
                lr *= st.Z_estimate
            step(st, g, cfg, lr)
            _check_finite(st.y, epoch)
            ms = (time.perf_counter() - t0) * 1e3
            last = epoch == cfg.epochs - 1
            if cfg.loss_every and (epoch % cfg.loss_every == 0 or last):
                loss = loss_trace_sample(st.y, g, cfg, cfg.loss_samples, epoch, st.Z_estimate)
            else:
                loss = None
            angle = None
            if cfg.angle_every and st.y.shape[1] == 2 and (epoch % cfg.angle_every == 0 or last):
                tree = bh.build(st.y, cfg.theta)
                angle = bh.angle_agreement(st.y, tree, g, cfg.seed, cfg.angle_samples, epoch,
                                           cfg.neg_rate, _mode(cfg), cfg.kernel.a, cfg.kernel.b,
                                           cfg.kernel.eps).mean
            if loss is not None or angle is not None:
                trace.epoch.append(epoch)
                trace.loss.append(loss)
                trace.lr.append(lr)
                trace.wall_ms.append(ms)
                trace.Z.append(st.Z_estimate)
                trace.angle.append(angle)
                if fh is not None:
                    rec = {"epoch": epoch, "lr": lr, "loss": loss, "wall_ms": round(ms, 3),
                           "Z": st.Z_estimate}
                    if angle is not None:
                        rec["angle"] = angle
                    fh.write(json.dumps(rec) + "\n")
    finally:
        if fh is not None:
            fh.close()
    if info is not None:
        info.update(Z_estimate=st.Z_estimate, lr_k=k, summarized=st.summarized, pairs=st.pairs,
                    sampling=cfg.sampling)
        if cfg.angle_every:
            info["angles"] = [a for a in trace.angle if a is not None]
        if st.fires is not None:
            info["fires"] = st.fires
    return EmbeddingRecord(st.y), trace
