"""Deterministic SVG scatter plots of 2-D embeddings."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
)
UNLABELED = "#4c4c4c"
MAX_POINTS = 20_000


def downsample(n, max_points=MAX_POINTS, seed=0):
    """Sorted indices of at most ``max_points`` rows, drawn uniformly with ``seed``."""
    if max_points is None or n <= max_points:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=max_points, replace=False))


def label_colors(labels):
    classes, inv = np.unique(labels, return_inverse=True)
    return np.asarray(PALETTE)[inv % len(PALETTE)], classes


def plot_embedding(emb, labels, path, title=None, max_points=MAX_POINTS, seed=0, size=4.0):
    """Write an SVG scatter of ``emb`` coloured by ``labels`` (cycling 12 colours).

    Output bytes depend only on the inputs. Above ``max_points`` a seeded uniform
    subset is drawn.
    """
    y = np.asarray(getattr(emb, "coords", emb), dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError(f"plot_embedding needs a 2-D embedding, got shape {y.shape}")
    keep = downsample(y.shape[0], max_points, seed)
    y = y[keep]
    if labels is not None:
        colors, _ = label_colors(np.asarray(labels)[keep])
    else:
        colors = UNLABELED
    marker = max(0.5, min(8.0, 4000.0 / max(len(keep), 1)))
    with plt.rc_context({"svg.hashsalt": "gdr", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(size, size))
        ax.scatter(y[:, 0], y[:, 1], c=colors, s=marker, linewidths=0, rasterized=False)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title, fontsize=9)
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
        plt.close(fig)
    return path


def plot_grid(panels, path, ncols=4, size=2.5, max_points=MAX_POINTS, seed=0):
    """Grid of ``(title, coords, labels)`` panels in one SVG, for sweep tables."""
    nrows = max(1, -(-len(panels) // ncols))
    ncols = max(1, min(ncols, len(panels)))
    with plt.rc_context({"svg.hashsalt": "gdr", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(nrows, ncols, figsize=(size * ncols, size * nrows), squeeze=False)
        for ax in axes.ravel():
            ax.set_axis_off()
        for ax, (title, coords, labels) in zip(axes.ravel(), panels):
            y = np.asarray(coords, dtype=np.float64)
            keep = downsample(y.shape[0], max_points, seed)
            c = label_colors(np.asarray(labels)[keep])[0] if labels is not None else UNLABELED
            ax.scatter(y[keep, 0], y[keep, 1], c=c, s=max(0.3, min(4.0, 2000.0 / len(keep))),
                       linewidths=0)
            ax.set_aspect("equal", adjustable="datalim")
            ax.set_title(title, fontsize=8)
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
        plt.close(fig)
    return path


def plot_lines(series, path, xlabel, ylabel, logy=False):
    """Line plot of ``{name: (x, y)}``; used by the runtime benchmark."""
    with plt.rc_context({"svg.hashsalt": "gdr", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for i, (name, (x, yv)) in enumerate(sorted(series.items())):
            ax.plot(x, yv, marker="o", color=PALETTE[i % len(PALETTE)], label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if logy:
            ax.set_yscale("log")
        ax.legend(fontsize=8)
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
        plt.close(fig)
    return path
