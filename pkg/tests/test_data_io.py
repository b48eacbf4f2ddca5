import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdr.data_io import (DataFormatError, DenseDataset, EmbeddingRecord, load_csv, load_idx,
                         make_blobs, make_swiss_roll, read_embedding, resample_dims,
                         resample_rows, write_embedding, write_idx)


def test_csv_with_labels(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2,0\n3,4,1\n5,6,1\n")
    d = load_csv(p, label_column=2)
    assert d.points.shape == (3, 2)
    np.testing.assert_array_equal(d.labels, [0, 1, 1])


def test_csv_reports_row_and_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n3,x\n")
    with pytest.raises(DataFormatError) as err:
        load_csv(p)
    assert err.value.row == 2 and err.value.column == 2


def test_csv_ragged(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n3\n4,5\n")
    with pytest.raises(DataFormatError):
        load_csv(p)


def test_csv_rejects_nan(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\nnan,3\n")
    with pytest.raises(DataFormatError):
        load_csv(p)


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (7, 4, 3), dtype=np.uint8)
    labs = rng.integers(0, 10, 7, dtype=np.uint8)
    write_idx(tmp_path / "images-idx3-ubyte.gz", imgs)
    write_idx(tmp_path / "labels-idx1-ubyte", labs)
    d = load_idx(tmp_path / "images-idx3-ubyte.gz", tmp_path / "labels-idx1-ubyte")
    assert d.points.shape == (7, 12)
    np.testing.assert_allclose(d.points * 255, imgs.reshape(7, -1), atol=1e-4)
    np.testing.assert_array_equal(d.labels, labs)


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "x.idx"
    p.write_bytes(b"\x00\x00\x08\x01" + b"\x00\x00\x00\x02" + b"\x01\x02")
    with pytest.raises(DataFormatError):
        load_idx(p)


def test_idx_truncated(tmp_path):
    imgs = np.zeros((3, 2, 2), dtype=np.uint8)
    write_idx(tmp_path / "a.gz", imgs)
    raw = gzip.decompress((tmp_path / "a.gz").read_bytes())
    (tmp_path / "b").write_bytes(raw[:-3])
    with pytest.raises(DataFormatError):
        load_idx(tmp_path / "b")


def test_idx_gzip_is_deterministic(tmp_path):
    a = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a.gz", a)
    write_idx(tmp_path / "b.gz", a)
    assert (tmp_path / "a.gz").read_bytes() == (tmp_path / "b.gz").read_bytes()


def test_dataset_validation():
    with pytest.raises(ValueError):
        DenseDataset(np.ones((1, 3)))
    with pytest.raises(ValueError):
        DenseDataset(np.array([[0.0, np.inf], [1.0, 2.0]]))
    with pytest.raises(ValueError):
        DenseDataset(np.ones((3, 2)), labels=np.array([0, -1, 2]))


def test_content_hash_tracks_values():
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert DenseDataset(x).content_hash() == DenseDataset(x.copy()).content_hash()
    y = x.copy()
    y[0, 0] += 1
    assert DenseDataset(x).content_hash() != DenseDataset(y).content_hash()


def test_generators_are_seeded():
    a, b = make_blobs(100, 4, 5, 8.0, seed=3), make_blobs(100, 4, 5, 8.0, seed=3)
    np.testing.assert_array_equal(a.points, b.points)
    assert np.bincount(a.labels).tolist() == [25, 25, 25, 25]
    r = make_swiss_roll(50, 0.1, seed=1)
    assert r.points.shape == (50, 3)


@given(st.integers(2, 30), st.integers(1, 4), st.booleans())
@settings(max_examples=30, deadline=None)
def test_embedding_csv_roundtrip(tmp_path_factory, n, d, labeled):
    rng = np.random.default_rng(n * 7 + d)
    rec = EmbeddingRecord(rng.normal(size=(n, d)) * 10 ** rng.uniform(-5, 5),
                          labels=rng.integers(0, 5, n) if labeled else None)
    path = tmp_path_factory.mktemp("emb") / "e.csv"
    write_embedding(rec, path)
    back = read_embedding(path)
    np.testing.assert_array_equal(back.coords, rec.coords)
    if labeled:
        np.testing.assert_array_equal(back.labels, rec.labels)


def test_resample_rows_down_and_up():
    d = make_blobs(100, 2, 4, 5.0)
    down = resample_rows(d, 40, seed=0)
    assert down.n == 40
    up = resample_rows(d, 250, seed=0)
    assert up.n == 250
    np.testing.assert_array_equal(up.points[:100], d.points)
    # upsampled copies carry noise, so no row is duplicated
    assert np.unique(up.points, axis=0).shape[0] == 250
    dev = up.points[100:] - d.points[np.argmin(
        ((up.points[100:, None, :] - d.points[None]) ** 2).sum(-1), axis=1)]
    assert np.abs(dev).max() < 1e-2 * d.points.std(axis=0).max()


def test_resample_dims():
    d = make_blobs(20, 2, 10, 5.0)
    r = resample_dims(d, 3, seed=1)
    assert r.dim == 3
    cols = [int(np.flatnonzero(np.all(d.points == r.points[:, [c]], axis=0))[0]) for c in range(3)]
    assert cols == sorted(cols)
