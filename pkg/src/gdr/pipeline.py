"""End-to-end runs: dataset -> kNN -> affinities -> init -> optimize -> metrics and files."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .affinity import build_affinity
from .config import AUTO_EXACT_MAX_N, PipelineConfig
from .data_io import (EmbeddingRecord, load_csv, load_idx, make_blobs, make_swiss_roll,
                      resample_rows, write_embedding)
from .initialization import initialize
from .knn import build_knn
from .metrics import evaluate
from .optimizer import run
from .plotting import plot_embedding

MNIST_ENV = "GDR_MNIST_DIR"
DEFAULT_MNIST = Path(__file__).resolve().parents[2] / "data" / "mnist5k"
STAGES = ("knn_ms", "affinity_ms", "init_ms", "optimize_ms")


@dataclass
class RunReport:
    config: dict
    config_hash: str
    dataset: dict
    timings: dict
    metrics: dict | None = None
    artifacts: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source):
        if isinstance(source, dict):
            return cls(**source)
        text = Path(source).read_text() if os.path.exists(str(source)) else source
        return cls(**json.loads(text))


# -- dataset sources

def _parse_kv(text):
    out = {}
    for part in filter(None, text.split(",")):
        key, _, val = part.partition("=")
        if not _:
            raise ValueError(f"expected key=value, got {part!r}")
        try:
            out[key.strip()] = int(val)
        except ValueError:
            out[key.strip()] = float(val)
    return out


def generate(spec):
    """Synthetic dataset from ``name:key=value,...``, e.g. ``blobs:n=2000,c=5,dim=10``."""
    name, _, args = spec.partition(":")
    defaults = {"blobs": {"n": 2000, "c": 5, "dim": 10, "sep": 10.0, "seed": 0},
                "swiss_roll": {"n": 5000, "noise": 0.0, "seed": 0}}
    if name not in defaults:
        raise ValueError(f"unknown generator {name!r} (blobs or swiss_roll)")
    kv = _parse_kv(args)
    unknown = set(kv) - set(defaults[name])
    if unknown:
        raise ValueError(f"unknown generator arguments for {name}: {sorted(unknown)}")
    a = {**defaults[name], **kv}
    if name == "blobs":
        return make_blobs(int(a["n"]), int(a["c"]), int(a["dim"]), float(a["sep"]), int(a["seed"]))
    return make_swiss_roll(int(a["n"]), float(a["noise"]), int(a["seed"]))


def _idx_pair(directory):
    d = Path(directory)
    images = sorted(p for p in d.iterdir() if "images" in p.name and "idx3" in p.name)
    labels = sorted(p for p in d.iterdir() if "labels" in p.name and "idx1" in p.name)
    if not images:
        raise FileNotFoundError(f"{d}: no *images*idx3* file")
    return images[0], labels[0] if labels else None


def load_path(path, label_column=None):
    p = Path(path)
    if p.is_dir():
        images, labels = _idx_pair(p)
        return load_idx(images, labels, name=p.name)
    if "idx3" in p.name:
        return load_idx(p, None)
    return load_csv(p, label_column=label_column)


def load_source(dataset=None, generator=None, label_column=None, n=None, sample_seed=0):
    """Resolve a dataset descriptor: a path, ``mnist``, or a generator spec; optionally resampled."""
    if (dataset is None) == (generator is None):
        raise ValueError("give exactly one of --dataset or --generator")
    if generator is not None:
        data = generate(generator)
    elif dataset == "mnist":
        data = load_path(os.environ.get(MNIST_ENV) or DEFAULT_MNIST)
        data.name = "mnist"
    else:
        data = load_path(dataset, label_column)
    if n is not None and n != data.n:
        data = resample_rows(data, n, sample_seed)
    return data


# -- the pipeline

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return {"sum": float(obj.sum()), "size": int(obj.size)}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run_pipeline(data, cfg, out_dir=None, prefix=None, source=None, metrics=True, plot=True,
                 trace=True, cache_dir=None, metrics_k=100):
    """Run ``cfg`` on ``data``; returns ``(EmbeddingRecord, RunReport)``.

    With ``out_dir`` set, writes ``<prefix>.csv``, ``.svg`` (2-D only), ``.report.json``
    and ``.trace.jsonl``, each carrying the config hash.
    """
    cfg.validate()
    if cfg.k >= data.n:
        raise ValueError(f"k={cfg.k} needs more than {cfg.k} points (dataset has {data.n})")
    chash = cfg.config_hash()
    paths = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{prefix or cfg.preset}_{chash}"
        paths = {"embedding": out / f"{stem}.csv", "report": out / f"{stem}.report.json"}
        if trace:
            paths["trace"] = out / f"{stem}.trace.jsonl"
        if plot and cfg.dim == 2:
            paths["plot"] = out / f"{stem}.svg"

    info = {}
    timings = {}
    t_start = time.perf_counter()
    t = t_start
    exact = cfg.knn == "exact" or (cfg.knn == "auto" and data.n <= AUTO_EXACT_MAX_N)
    knn = build_knn(data, cfg.k, exact=exact, seed=cfg.seed, cache_dir=cache_dir)
    timings["knn_ms"], t = (time.perf_counter() - t) * 1e3, time.perf_counter()
    g = build_affinity(knn, cfg.affinity_config())
    timings["affinity_ms"], t = (time.perf_counter() - t) * 1e3, time.perf_counter()
    y0 = initialize(g, cfg.dim, cfg.init_config(), info)
    timings["init_ms"], t = (time.perf_counter() - t) * 1e3, time.perf_counter()
    rec, tr = run(g, y0, cfg.run_config(), trace_path=paths.get("trace"), info=info)
    now = time.perf_counter()
    timings["optimize_ms"] = (now - t) * 1e3
    timings["total_ms"] = (now - t_start) * 1e3

    rec = EmbeddingRecord(rec.coords, chash, data.labels)
    report_metrics = None
    if metrics and data.labels is not None:
        report_metrics = evaluate(rec, data.labels, k=metrics_k, seed=cfg.seed).to_dict()
    info.update(knn_exact=exact, degenerate_rows=g.degenerate_rows, n_edges=g.n_directed,
                final_loss=tr.loss[-1] if tr.loss else None)
    desc = data.describe()
    desc["source"] = source
    report = RunReport(cfg.resolved().to_dict(), chash, desc, timings, report_metrics,
                       {k: str(v) for k, v in paths.items()}, _jsonable(info))
    if paths:
        write_embedding(rec, paths["embedding"])
        if "plot" in paths:
            plot_embedding(rec, data.labels, paths["plot"], title=f"{cfg.preset} {chash}")
        report.to_json(paths["report"])
    return rec, report


def rerun(report, out_dir=None, **kwargs):
    """Re-run a RunReport's snapshot against its recorded dataset source."""
    report = report if isinstance(report, RunReport) else RunReport.from_json(report)
    source = report.dataset.get("source")
    if not source:
        raise ValueError("report has no dataset source to re-run from")
    data = load_source(**source)
    if data.content_hash() != report.dataset["content_hash"]:
        raise ValueError("dataset content changed since the report was written")
    cfg = PipelineConfig.from_dict(report.config)
    return run_pipeline(data, cfg, out_dir=out_dir, source=source, **kwargs)
