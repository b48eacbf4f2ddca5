"""Parameter sweeps and the runtime scaling harness."""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .config import SWEEP_SWITCHES, preset, swap
from .data_io import resample_dims, resample_rows
from .pipeline import run_pipeline
from .plotting import plot_grid, plot_lines

ENGINES = ("gdr", "gdr_normalized", "umap", "tsne")


def engine_config(name, **overrides):
    if name == "gdr_normalized":
        return preset("gdr", normalized=True, **overrides)
    return preset(name, **overrides)


# -- parameter sweeps

@dataclass
class SweepCell:
    engine: str
    switch: str
    seed: int
    knn_accuracy: float
    v_score: float
    config_hash: str


def sweep(data, engines, switches=SWEEP_SWITCHES, seeds=(0,), out_dir=None, source=None,
          metrics_k=100, plot=True):
    """Base run plus one run per swapped switch, for every engine and seed.

    ``engines`` maps a row name to its base ``PipelineConfig``. Invalid swapped
    configs are rejected before anything runs.
    """
    if data.labels is None:
        raise ValueError("sweep needs a labeled dataset")
    plan = []
    for name, base in engines.items():
        for sw in ("base", *switches):
            for seed in seeds:
                cfg = replace(base if sw == "base" else swap(base, sw), seed=seed)
                plan.append((name, sw, seed, cfg.validate()))
    cells, panels = [], []
    for name, sw, seed, cfg in plan:
        rec, rep = run_pipeline(data, cfg, out_dir=out_dir, prefix=f"{name}_{sw}_s{seed}",
                                source=source, metrics_k=metrics_k, plot=False, trace=False)
        m = rep.metrics
        cells.append(SweepCell(name, sw, seed, m["knn_accuracy"], 100.0 * m["v_score"],
                               rep.config_hash))
        if seed == seeds[0] and cfg.dim == 2:
            panels.append((f"{name} / {sw}", rec.coords, data.labels))
    if out_dir is not None and plot and panels:
        plot_grid(panels, Path(out_dir) / "sweep.svg", ncols=len(switches) + 1)
    return cells


@dataclass
class SweepTable:
    metric: str
    columns: list
    rows: dict
    row_mean: dict
    row_ci: dict
    deviation: list

    def format(self, digits=1):
        head = ["engine", *self.columns, "algorithm mean"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for name, vals in self.rows.items():
            cells = [f"{v:.{digits}f}" for v in vals]
            cells.append(f"{self.row_mean[name]:.{digits}f} ± {self.row_ci[name]:.{digits}f}")
            lines.append("| " + " | ".join([name, *cells]) + " |")
        dev = [f"{v:+.{digits}f}" for v in self.deviation]
        lines.append("| " + " | ".join(["mean dev.", *dev, ""]) + " |")
        return "\n".join(lines)


def sweep_table(cells, metric="knn_accuracy"):
    """Engine x switch table (seed-averaged) with algorithm means and per-column deviations.

    Each column's deviation is the average over engines of value minus that engine's mean.
    """
    columns = []
    for c in cells:
        if c.switch not in columns:
            columns.append(c.switch)
    engines = list(dict.fromkeys(c.engine for c in cells))
    rows, mean, ci = {}, {}, {}
    for e in engines:
        vals = []
        for sw in columns:
            v = [getattr(c, metric) for c in cells if c.engine == e and c.switch == sw]
            vals.append(float(np.mean(v)))
        rows[e] = vals
        mean[e] = float(np.mean(vals))
        ci[e] = float(1.96 * np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    dev = [float(np.mean([rows[e][j] - mean[e] for e in engines])) for j in range(len(columns))]
    return SweepTable(metric, columns, rows, mean, ci, dev)


def base_deltas(cells, metric="knn_accuracy"):
    """``{(engine, switch): swapped - base}`` of the seed-averaged metric."""
    t = sweep_table(cells, metric)
    j0 = t.columns.index("base")
    return {(e, sw): vals[j] - vals[j0] for e, vals in t.rows.items()
            for j, sw in enumerate(t.columns) if sw != "base"}


def write_cells(cells, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(cells[0])))
        w.writeheader()
        for c in cells:
            w.writerow(asdict(c))


# -- runtime scaling

def available_memory():
    """Bytes available to this process: the smaller of free RAM and the cgroup limit."""
    avail = os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    for f in ("/sys/fs/cgroup/memory.max", "/sys/fs/cgroup/memory/memory.limit_in_bytes"):
        try:
            raw = Path(f).read_text().strip()
        except OSError:
            continue
        if raw.isdigit():
            avail = min(avail, int(raw))
    return avail


def estimate_memory(n, dim, k):
    """Peak bytes of one run: data copies, kNN heaps, the affinity graph and the embedding."""
    data = 2 * 4 * n * dim
    knn = 3 * 16 * n * (k + 1)
    graph = 2 * 24 * n * k
    blas_block = 8 * 10_000_000
    embed = 8 * 8 * n
    return data + knn + graph + blas_block + embed


def bench(data, axis, sizes, engines=ENGINES, epochs=500, seed=0, out_csv=None, plot_path=None,
          memory_limit=None, **overrides):
    """Time every (engine, size) cell sequentially; returns a list of row dicts.

    ``axis="n"`` resamples points (upsampled rows get noise), ``axis="D"`` keeps a
    random subset of feature columns.
    """
    if axis not in ("n", "D"):
        raise ValueError("axis must be 'n' or 'D'")
    cfgs = {e: engine_config(e, epochs=epochs, seed=seed, **overrides).validate() for e in engines}
    limit = available_memory() if memory_limit is None else memory_limit
    kmax = max(c.k for c in cfgs.values())
    for s in sizes:
        n, dim = (s, data.dim) if axis == "n" else (data.n, s)
        need = estimate_memory(n, dim, kmax)
        if need > limit:
            raise MemoryError(f"{axis}={s} needs about {need / 2**30:.1f} GiB, "
                              f"only {limit / 2**30:.1f} GiB available")
    rows = []
    for s in sizes:
        sub = resample_rows(data, s, seed) if axis == "n" else resample_dims(data, s, seed)
        for e in engines:
            _, rep = run_pipeline(sub, cfgs[e], metrics=False, plot=False, trace=False)
            rows.append({"engine": e, "axis": axis, "size": s, "n": sub.n, "D": sub.dim,
                         **{k: round(v, 3) for k, v in rep.timings.items()},
                         "config_hash": rep.config_hash})
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    if plot_path is not None:
        series = {}
        for e in engines:
            r = [x for x in rows if x["engine"] == e]
            series[e] = ([x["size"] for x in r], [x["total_ms"] / 1e3 for x in r])
        plot_lines(series, plot_path, "points" if axis == "n" else "dimensions", "seconds",
                   logy=True)
    return rows
