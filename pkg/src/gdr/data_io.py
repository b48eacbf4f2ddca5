"""Datasets, embeddings and their on-disk formats (CSV and IDX)."""

from __future__ import annotations

import csv
import gzip
import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRICS = ("euclidean", "cosine")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed input file. ``row``/``column`` are 1-based when known."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} (at {', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class DenseDataset:
    points: np.ndarray
    labels: np.ndarray | None = None
    metric: str = "euclidean"
    name: str = "dataset"

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float32)
        if pts.ndim != 2:
            raise ValueError(f"points must be 2-D, got shape {pts.shape}")
        if pts.shape[0] < 2 or pts.shape[1] < 1:
            raise ValueError(f"need n >= 2 and D >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite values")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        self.points = pts
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (pts.shape[0],):
                raise ValueError("labels length must equal number of points")
            if lab.size and (lab.min() < 0 or not np.all(lab == np.round(lab))):
                raise ValueError("labels must be non-negative integers")
            self.labels = lab.astype(np.int64)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.metric.encode())
        h.update(str(self.points.shape).encode())
        h.update(self.points.tobytes())
        return h.hexdigest()[:16]

    def describe(self):
        return {
            "name": self.name,
            "n": self.n,
            "D": self.dim,
            "metric": self.metric,
            "labeled": self.labels is not None,
            "n_classes": int(np.unique(self.labels).size) if self.labels is not None else None,
            "content_hash": self.content_hash(),
        }


@dataclass
class EmbeddingRecord:
    coords: np.ndarray
    source_config_hash: str = ""
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] < 1:
            raise ValueError(f"coords must be n x d with d >= 1, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("embedding contains non-finite coordinates")
        self.coords = c

    @property
    def d(self):
        return self.coords.shape[1]

    @property
    def n(self):
        return self.coords.shape[0]


def _open_text(path):
    return open(path, "r", newline="", encoding="utf-8")


def load_csv(path, label_column=None, has_header=False, metric="euclidean", name=None):
    """Read a comma-separated numeric table.

    ``label_column`` is a 0-based column index; that column is split off as
    integer labels. Parse errors report 1-based file row and column.
    """
    path = Path(path)
    rows = []
    labels = [] if label_column is not None else None
    width = None
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if width is None:
                width = len(row)
                if label_column is not None and not 0 <= label_column < width:
                    raise DataFormatError(f"label column {label_column} out of range", row=lineno)
            elif len(row) != width:
                raise DataFormatError(f"ragged row: expected {width} cells, got {len(row)}", row=lineno)
            values = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(f"non-numeric cell {cell!r}", row=lineno, column=col + 1) from None
                if not math.isfinite(v):
                    raise DataFormatError(f"non-finite cell {cell!r}", row=lineno, column=col + 1)
                if col == label_column:
                    if v < 0 or v != int(v):
                        raise DataFormatError(f"label {cell!r} is not a non-negative integer",
                                              row=lineno, column=col + 1)
                    labels.append(int(v))
                else:
                    values.append(v)
            rows.append(values)
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need at least 2 data rows, found {len(rows)}")
    points = np.asarray(rows, dtype=np.float32)
    if points.shape[1] == 0:
        raise DataFormatError(f"{path}: no feature columns besides the label")
    return DenseDataset(points, None if labels is None else np.asarray(labels), metric,
                        name or path.stem)


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, what):
    if len(raw) < 4:
        raise DataFormatError(f"{what}: file too short for IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{what}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims)) if dims else 0
    payload = raw[header:]
    if len(payload) < size:
        raise DataFormatError(f"{what}: truncated payload ({len(payload)} of {size} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=size).reshape(dims)


def load_idx(images_path, labels_path=None, name=None):
    """Read MNIST-family IDX files; pixels are scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, "images")
    n = images.shape[0]
    points = images.reshape(n, -1).astype(np.float32) / np.float32(255.0)
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, "labels")
        if labels.shape[0] != n:
            raise DataFormatError(f"image/label count mismatch: {n} images, {labels.shape[0]} labels")
        labels = labels.astype(np.int64)
    return DenseDataset(points, labels, "euclidean", name or Path(images_path).name.split(".")[0])


def write_idx(path, array):
    """Write a uint8 array as IDX (images if 3-D, labels if 1-D)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = header + arr.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        data = gzip.compress(data, mtime=0)
    path.write_bytes(data)


def make_swiss_roll(n, noise_sd=0.0, seed=0):
    if n < 2:
        raise ValueError("n must be >= 2")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    h = rng.uniform(0.0, 21.0, size=n)
    pts = np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    if noise_sd > 0:
        pts = pts + rng.normal(0.0, noise_sd, size=pts.shape)
    return DenseDataset(pts, None, "euclidean", f"swiss_roll_{n}")


def make_blobs(n, c, dim, sep, seed=0):
    """``c`` unit-covariance Gaussian clusters with centers on a sphere of radius ``sep``."""
    if not n >= c >= 1:
        raise ValueError("need n >= c >= 1")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(c, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    centers = sep * directions / norms
    counts = np.full(c, n // c)
    counts[: n % c] += 1
    labels = np.repeat(np.arange(c), counts)
    pts = centers[labels] + rng.normal(size=(n, dim))
    return DenseDataset(pts, labels, "euclidean", f"blobs_{n}_{c}_{dim}")


def write_embedding(rec, path, labels=None):
    """CSV with header ``y0..y{d-1}[,label]``; values written at full precision."""
    labels = rec.labels if labels is None else labels
    path = Path(path)
    header = [f"y{c}" for c in range(rec.d)]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(rec.coords):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            fh.write(",".join(cells) + "\n")


def read_embedding(path, source_config_hash=""):
    path = Path(path)
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataFormatError(f"{path}: empty embedding file")
        has_label = header[-1] == "label"
        d = len(header) - int(has_label)
        coords, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError("ragged embedding row", row=lineno)
            try:
                coords.append([float(v) for v in row[:d]])
                if has_label:
                    labels.append(int(row[d]))
            except ValueError:
                raise DataFormatError("non-numeric embedding cell", row=lineno) from None
    return EmbeddingRecord(np.asarray(coords, dtype=np.float64).reshape(-1, d), source_config_hash,
                           np.asarray(labels, dtype=np.int64) if has_label else None)


def resample_rows(data, n, seed=0, noise=1e-3):
    """Uniformly subsample to ``n`` points, or upsample by duplicating rows with noise.

    Upsampled copies get Gaussian noise with sd ``noise`` times each feature's sd,
    so that no two rows coincide. Originals are kept unchanged.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng([seed, 0xD5])
    x = data.points
    if n <= data.n:
        keep = np.sort(rng.choice(data.n, size=n, replace=False))
        pts, lab = x[keep], None if data.labels is None else data.labels[keep]
    else:
        extra = rng.integers(0, data.n, size=n - data.n)
        sd = x.std(axis=0).astype(np.float64)
        jitter = rng.normal(size=(extra.size, x.shape[1])) * (noise * sd)
        pts = np.concatenate([x, (x[extra] + jitter).astype(np.float32)])
        lab = None if data.labels is None else np.concatenate([data.labels, data.labels[extra]])
    return DenseDataset(pts, lab, data.metric, f"{data.name}_n{n}")


def resample_dims(data, dims, seed=0):
    """Keep ``dims`` feature columns chosen uniformly at random (order preserved)."""
    if not 1 <= dims <= data.dim:
        raise ValueError(f"need 1 <= dims <= {data.dim}")
    rng = np.random.default_rng([seed, 0xD6])
    cols = np.sort(rng.choice(data.dim, size=dims, replace=False))
    return DenseDataset(data.points[:, cols], data.labels, data.metric, f"{data.name}_D{dims}")
