"""Low-dimensional kernel, losses and per-pair forces.

Every force returned here is the negative gradient contribution of one
unordered pair ``{i, j}`` to ``y_i``, for losses summed over ordered pairs
``i != j``. Coefficient helpers return ``c`` with ``force = c * (y_i - y_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import curve_fit

LOSSES = ("kl", "frobenius")
KL = 0
FROBENIUS = 1
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class KernelParams:
    a: float = 1.0
    b: float = 1.0
    eps: float = 1e-3

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.eps > 0):
            raise ValueError("kernel parameters a, b, eps must be positive")


@dataclass
class GradientContext:
    normalized: bool = False
    loss: str = "kl"
    Z: float = 1.0
    n: int = 2
    # sum_{k != l} (p_kl - q_kl) q_kl, needed by the exact normalized Frobenius gradient
    frob_cross: float = 0.0
    frob_form: str = "exact"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.normalized and not self.Z > 0:
            raise ValueError("Z must be positive in normalized mode")
        if self.frob_form not in ("exact", "printed"):
            raise ValueError(f"unknown frob_form {self.frob_form!r}")


@njit(cache=True, inline="always")
def kernel(s, a, b):
    if b == 1.0:
        return 1.0 / (1.0 + a * s)
    return 1.0 / (1.0 + a * s ** b)


@njit(cache=True, inline="always")
def _slope(s, a, b):
    # -(dw/ds) / w**2 = a * b * s**(b - 1)
    if b == 1.0:
        return a
    return a * b * s ** (b - 1.0)


@njit(cache=True)
def attract_coef(s, p, loss, normalized, a, b, Z):
    if s <= 0.0:
        return 0.0
    w = kernel(s, a, b)
    g = _slope(s, a, b)
    if loss == KL:
        return -4.0 * p * g * w
    if normalized:
        return -8.0 * p * g * w * w / Z
    return -8.0 * p * g * w * w


@njit(cache=True)
def attract_coef_printed_frob(s, p, a, b, Z):
    if s <= 0.0:
        return 0.0
    q = kernel(s, a, b) / Z
    return -4.0 * p * Z * (q * q + 2.0 * q * q * q) * _slope(s, a, b)


@njit(cache=True)
def repulse_coef(s, p, loss, normalized, a, b, eps, Z, cross, printed):
    """Repulsion from one partner; ``p`` is the (estimated) affinity of the pair."""
    if s <= 0.0:
        return 0.0
    w = kernel(s, a, b)
    if loss == KL:
        if normalized:
            return 4.0 * _slope(s, a, b) * w * w / Z
        return 4.0 * b * (1.0 - p) * w / (eps + s)
    g = _slope(s, a, b)
    if normalized:
        q = w / Z
        if printed:
            return 4.0 * Z * (q * q * q + 2.0 * q * q * q * q) * g
        return 8.0 * (q + cross) * g * w * w / Z
    return 8.0 * g * w * w * w


def q_unnorm(dist_sq, kp=KernelParams()):
    s = np.asarray(dist_sq, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("dist_sq must be non-negative")
    out = 1.0 / (1.0 + kp.a * s ** kp.b)
    return float(out) if out.ndim == 0 else out


def _target_curve(d, min_dist, spread):
    return np.where(d <= min_dist, 1.0, np.exp(-(d - min_dist) / spread))


def fit_ab(min_dist=0.1, spread=1.0, return_residual=False):
    """Least-squares fit of ``1 / (1 + a d^(2b))`` to the offset-exponential target."""
    if not 0 < min_dist < spread:
        raise ValueError("need 0 < min_dist < spread")
    d = np.linspace(0.0, 3.0 * spread, 300)
    target = _target_curve(d, min_dist, spread)

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    try:
        (a, b), _ = curve_fit(curve, d, target, p0=(1.0, 1.0), method="lm", maxfev=600)
    except RuntimeError as exc:
        raise RuntimeError(f"a/b fit did not converge: {exc}") from None
    if return_residual:
        return float(a), float(b), float(np.max(np.abs(curve(d, a, b) - target)))
    return float(a), float(b)


def log1mq_grad(dist, a=1.0, b=1.0):
    """d/dr log(1 - q(r^2)); the ``1 + a r^(2b)`` numerator cancels, leaving ``2b q / r``."""
    r = np.asarray(dist, dtype=np.float64)
    q = 1.0 / (1.0 + a * r ** (2.0 * b))
    return 2.0 * b * q / r


def grad_pair(y_i, y_j, p_ij, kind, ctx, kp=KernelParams()):
    """Force on ``y_i`` from the pair ``{i, j}`` (attractive or repulsive part)."""
    delta = np.asarray(y_i, dtype=np.float64) - np.asarray(y_j, dtype=np.float64)
    s = float(delta @ delta)
    loss = LOSSES.index(ctx.loss)
    if kind == "attract":
        if ctx.loss == "frobenius" and ctx.normalized and ctx.frob_form == "printed":
            c = attract_coef_printed_frob(s, p_ij, kp.a, kp.b, ctx.Z)
        else:
            c = attract_coef(s, p_ij, loss, ctx.normalized, kp.a, kp.b, ctx.Z)
    elif kind == "repulse":
        c = repulse_coef(s, p_ij, loss, ctx.normalized, kp.a, kp.b, kp.eps, ctx.Z,
                         ctx.frob_cross, ctx.frob_form == "printed")
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return c * delta


def estimate_Z(sampled_dist_sq, n, m=None, kp=None):
    """Scale the kernel mass of ``m`` uniformly sampled ordered pairs up to all ``n(n-1)``."""
    s = np.asarray(sampled_dist_sq, dtype=np.float64)
    m = s.size if m is None else m
    if m < 1:
        raise ValueError("need at least one sampled pair")
    w = 1.0 / (1.0 + s) if kp is None else q_unnorm(s, kp)
    return float(n * (n - 1) / m * np.sum(w))


def dense_q(y, kp=KernelParams(), normalized=False):
    """Dense Q (zero diagonal) and the kernel mass Z."""
    y = np.asarray(y, dtype=np.float64)
    diff = y[:, None, :] - y[None, :, :]
    s = np.einsum("ijk,ijk->ij", diff, diff)
    w = 1.0 / (1.0 + kp.a * s ** kp.b)
    np.fill_diagonal(w, 0.0)
    Z = float(w.sum())
    return (w / Z if normalized else w), Z


def _offdiag(m):
    return m[~np.eye(m.shape[0], dtype=bool)]


def _xlogy_ratio(p, q):
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz] / q[nz])
    return out


def loss_kl_normalized(P, Q):
    p = _offdiag(np.asarray(P, dtype=np.float64))
    q = np.clip(_offdiag(np.asarray(Q, dtype=np.float64)), LOG_CLAMP, 1.0 - LOG_CLAMP)
    return float(np.sum(_xlogy_ratio(p, q)))


def loss_kl_unnormalized(P, Q):
    p = _offdiag(np.asarray(P, dtype=np.float64))
    q = np.clip(_offdiag(np.asarray(Q, dtype=np.float64)), LOG_CLAMP, 1.0 - LOG_CLAMP)
    return float(np.sum(_xlogy_ratio(p, q) + _xlogy_ratio(1.0 - p, 1.0 - q)))


def loss_frobenius(P, Q):
    p = _offdiag(np.asarray(P, dtype=np.float64))
    q = _offdiag(np.asarray(Q, dtype=np.float64))
    return float(np.sum((p - q) ** 2))


def total_loss(y, P, loss="kl", normalized=False, kp=KernelParams()):
    Q, _ = dense_q(y, kp, normalized)
    if loss == "frobenius":
        return loss_frobenius(P, Q)
    return loss_kl_normalized(P, Q) if normalized else loss_kl_unnormalized(P, Q)


def frob_cross_term(P, Q):
    return float(np.sum(_offdiag((np.asarray(P) - Q) * Q)))
