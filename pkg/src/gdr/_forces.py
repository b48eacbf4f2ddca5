"""Numba building blocks shared by the optimizer and the Barnes-Hut engine.

Forces are accumulated as raw sums (``u``, ``v`` terms) whose final scaling
depends on quantities known only after a full pass (Z, the Frobenius cross
term, the repulsion sample count). ``combine_forces`` applies that scaling.

Modes:
    0  KL, normalized          3  Frobenius, unnormalized
    1  KL, unnormalized        4  Frobenius, normalized, printed formula
    2  Frobenius, normalized (exact gradient)
"""

import numpy as np
from numba import njit

from ._rng import rand_below
from .kernels import kernel, _slope

KL_NORM = 0
KL_UNNORM = 1
FROB_NORM = 2
FROB_UNNORM = 3
FROB_NORM_PRINTED = 4


def force_mode(loss, normalized, frob_form="exact"):
    if loss == "kl":
        return KL_NORM if normalized else KL_UNNORM
    if not normalized:
        return FROB_UNNORM
    return FROB_NORM_PRINTED if frob_form == "printed" else FROB_NORM


def is_normalized_mode(mode):
    return mode in (KL_NORM, FROB_NORM, FROB_NORM_PRINTED)


@njit(cache=True, inline="always")
def draw_partner(seed, epoch, slot, r, n, i):
    """Uniform point in ``[0, n) minus {i}``, keyed by (epoch, slot, r)."""
    u = rand_below(seed, epoch, slot, r, n - 1)
    return u + 1 if u >= i else u


@njit(cache=True, inline="always")
def attract_terms(mode, s, p, a, b):
    """Raw attraction sums ``(u, v)`` for one edge; multiply by the edge delta."""
    if s <= 0.0:
        return 0.0, 0.0
    w = kernel(s, a, b)
    g = _slope(s, a, b)
    if mode == KL_NORM or mode == KL_UNNORM:
        return p * g * w, 0.0
    if mode == FROB_NORM_PRINTED:
        return p * g * w * w, p * g * w * w * w
    return p * g * w * w, 0.0


@njit(cache=True, inline="always")
def repulse_terms(mode, s, pbar, a, b, eps):
    """Raw repulsion sums ``(u, v)`` plus kernel mass ``w`` for one partner."""
    w = kernel(s, a, b)
    if s <= 0.0:
        return 0.0, 0.0, w
    g = _slope(s, a, b)
    if mode == KL_NORM:
        return g * w * w, 0.0, w
    if mode == KL_UNNORM:
        return (1.0 - pbar) * b * w / (eps + s), 0.0, w
    if mode == FROB_NORM:
        return g * w * w * w, g * w * w, w
    if mode == FROB_NORM_PRINTED:
        return g * w * w * w, g * w * w * w * w, w
    return g * w * w * w, 0.0, w


@njit(cache=True, inline="always")
def attract_final(mode, u, v, Z):
    """Final attraction coefficient from raw sums."""
    if mode == KL_NORM or mode == KL_UNNORM:
        return -4.0 * u
    if mode == FROB_NORM:
        return -8.0 * u / Z
    if mode == FROB_NORM_PRINTED:
        return -4.0 * (u / Z + 2.0 * v / (Z * Z))
    return -8.0 * u


@njit(cache=True, inline="always")
def repulse_final(mode, u, v, Z, cross):
    if mode == KL_NORM:
        return 4.0 * u / Z
    if mode == KL_UNNORM:
        return 4.0 * u
    if mode == FROB_NORM:
        return 8.0 * (u / (Z * Z) + cross * v / Z)
    if mode == FROB_NORM_PRINTED:
        return 4.0 * u / (Z * Z) + 8.0 * v / (Z * Z * Z)
    return 8.0 * u


def combine_forces(mode, att_u, att_v, rep_u, rep_v, scale, Z, cross):
    """Per-point force from raw sums. ``scale`` multiplies the repulsion of each point."""
    if mode == KL_NORM or mode == KL_UNNORM:
        fa = -4.0 * att_u
    elif mode == FROB_NORM:
        fa = -8.0 * att_u / Z
    elif mode == FROB_NORM_PRINTED:
        fa = -4.0 * (att_u / Z + 2.0 * att_v / (Z * Z))
    else:
        fa = -8.0 * att_u
    if mode == KL_NORM:
        fr = 4.0 * rep_u / Z
    elif mode == KL_UNNORM:
        fr = 4.0 * rep_u
    elif mode == FROB_NORM:
        fr = 8.0 * (rep_u / (Z * Z) + cross * rep_v / Z)
    elif mode == FROB_NORM_PRINTED:
        fr = 4.0 * rep_u / (Z * Z) + 8.0 * rep_v / (Z * Z * Z)
    else:
        fr = 8.0 * rep_u
    return fa, fr * scale[:, None]


@njit(cache=True, inline="always")
def clip_value(x, clip):
    if x > clip:
        return clip
    if x < -clip:
        return -clip
    return x


@njit(cache=True)
def sampled_repulsion_point(i, y, indptr, indices, weights, neg_rate, exhaustive, seed, epoch,
                            mode, pbar, a, b, eps):
    """Raw repulsion sums for point ``i`` from its explicit-mode partners at ``epoch``.

    Sampled mode draws ``neg_rate`` partners per edge of ``i`` and uses
    ``pbar`` as their affinity. Exhaustive mode visits every other point once
    with its true affinity. Returns ``(ux, uy, vx, vy, z, z2, m)`` for the
    first two coordinates (2-D diagnostics).
    """
    n = y.shape[0]
    ux = 0.0
    uy = 0.0
    vx = 0.0
    vy = 0.0
    z = 0.0
    z2 = 0.0
    m = 0
    if exhaustive:
        ptr = indptr[i]
        stop = indptr[i + 1]
        for k in range(n):
            if k == i:
                continue
            while ptr < stop and indices[ptr] < k:
                ptr += 1
            pk = weights[ptr] if ptr < stop and indices[ptr] == k else 0.0
            dx = y[i, 0] - y[k, 0]
            dy = y[i, 1] - y[k, 1]
            tu, tv, w = repulse_terms(mode, dx * dx + dy * dy, pk, a, b, eps)
            ux += tu * dx
            uy += tu * dy
            vx += tv * dx
            vy += tv * dy
            z += w
            z2 += w * w
            m += 1
        return ux, uy, vx, vy, z, z2, m
    for e in range(indptr[i], indptr[i + 1]):
        for r in range(neg_rate):
            k = draw_partner(seed, epoch, e, r, n, i)
            dx = y[i, 0] - y[k, 0]
            dy = y[i, 1] - y[k, 1]
            tu, tv, w = repulse_terms(mode, dx * dx + dy * dy, pbar, a, b, eps)
            ux += tu * dx
            uy += tu * dy
            vx += tv * dx
            vy += tv * dy
            z += w
            z2 += w * w
            m += 1
    return ux, uy, vx, vy, z, z2, m
