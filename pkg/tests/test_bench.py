import csv

import numpy as np
import pytest

from gdr.bench import (SweepCell, base_deltas, bench, engine_config, estimate_memory, sweep,
                       sweep_table)
from gdr.cli import main
from gdr.config import SWEEP_SWITCHES
from gdr.pipeline import generate


def fake_cells(engines=("a", "b"), switches=("base", *SWEEP_SWITCHES), seeds=(0, 1)):
    cells = []
    for e_i, e in enumerate(engines):
        for s_i, sw in enumerate(switches):
            for seed in seeds:
                cells.append(SweepCell(e, sw, seed, 90.0 + e_i + s_i + seed, 50.0 + s_i, "h"))
    return cells


def test_table_layout():
    t = sweep_table(fake_cells())
    assert t.columns == ["base", *SWEEP_SWITCHES]
    text = t.format().splitlines()
    assert text[0].count("|") == 7 + 3
    assert len(text) == 2 + 2 + 1


def test_table_values_and_deviation():
    t = sweep_table(fake_cells())
    assert t.rows["a"][0] == pytest.approx(90.5)
    assert t.row_mean["b"] == pytest.approx(91.5 + 3.0)
    # deviation of column j = j - 3 for both engines
    np.testing.assert_allclose(t.deviation, np.arange(7) - 3.0)
    vals = np.arange(7) + 90.5
    assert t.row_ci["a"] == pytest.approx(1.96 * vals.std(ddof=1) / np.sqrt(7))


def test_empty_switch_list_gives_base_only():
    t = sweep_table(fake_cells(switches=("base",)))
    assert t.columns == ["base"] and t.row_ci["a"] == 0.0
    assert t.deviation == [0.0]


def test_base_deltas():
    d = base_deltas(fake_cells())
    assert d[("a", "init")] == pytest.approx(2.0)
    assert len(d) == 2 * len(SWEEP_SWITCHES)


def test_sweep_runs_small(tmp_path):
    data = generate("blobs:n=200,c=3,dim=5")
    engines = {"gdr": engine_config("gdr", epochs=20)}
    cells = sweep(data, engines, ("init",), seeds=(0,), out_dir=tmp_path, metrics_k=10)
    assert [c.switch for c in cells] == ["base", "init"]
    assert (tmp_path / "sweep.svg").exists()
    assert cells[0].config_hash != cells[1].config_hash


def test_sweep_needs_labels():
    data = generate("blobs:n=50")
    data.labels = None
    with pytest.raises(ValueError, match="labeled"):
        sweep(data, {"gdr": engine_config("gdr")})


def test_memory_refused_upfront(tmp_path):
    data = generate("blobs:n=200,c=3,dim=5")
    with pytest.raises(MemoryError, match="GiB"):
        bench(data, "n", [100, 10**9], engines=("gdr",), epochs=5, memory_limit=2**30,
              out_csv=tmp_path / "x.csv")
    assert not (tmp_path / "x.csv").exists()


def test_memory_estimate_grows():
    assert estimate_memory(2000, 10, 15) < estimate_memory(4000, 10, 15)
    assert estimate_memory(1000, 10, 15) < estimate_memory(1000, 100, 15)


def test_bench_csv(tmp_path):
    data = generate("blobs:n=300,c=3,dim=8")
    rows = bench(data, "n", [200, 400], engines=("gdr", "umap"), epochs=5,
                 out_csv=tmp_path / "b.csv", plot_path=tmp_path / "b.svg")
    assert [(r["engine"], r["n"]) for r in rows] == [("gdr", 200), ("umap", 200),
                                                     ("gdr", 400), ("umap", 400)]
    with open(tmp_path / "b.csv") as fh:
        recs = list(csv.DictReader(fh))
    assert {"knn_ms", "affinity_ms", "init_ms", "optimize_ms", "total_ms"} <= set(recs[0])
    dims = bench(data, "D", [3], engines=("gdr",), epochs=5)
    assert dims[0]["D"] == 3 and dims[0]["n"] == 300


def test_cli_sweep_and_bench(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep", "--generator", "blobs:n=150,c=3,dim=4", "--epochs", "10",
                 "--switches", "", "--out", str(out)]) == 0
    assert (out / "sweep_table.md").read_text().startswith("## knn_accuracy")
    assert main(["bench", "--generator", "blobs:n=150", "--sizes", "120", "--engines", "gdr",
                 "--epochs", "3", "--out", str(tmp_path / "b")]) == 0
    assert main(["bench", "--generator", "blobs:n=150", "--sizes", "120", "--engines", "nope",
                 "--out", str(tmp_path / "b")]) == 2
