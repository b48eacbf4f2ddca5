import json
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gdr.bench import engine_config
from gdr.cli import main
from gdr.config import SWEEP_SWITCHES, PipelineConfig, preset, swap
from gdr.pipeline import RunReport, generate, load_source, rerun, run_pipeline
from gdr.plotting import PALETTE, plot_embedding

GOLDEN = json.loads((Path(__file__).parent / "golden" / "presets.json").read_text())


@pytest.mark.parametrize("name", ["tsne", "umap", "gdr", "gdr_normalized"])
def test_presets_match_differences_table(name):
    cfg = engine_config(name).resolved()
    for key, want in GOLDEN[name].items():
        assert getattr(cfg, key) == want, key


def test_umap_scalars_are_fitted():
    kp = preset("umap").kernel_params()
    assert (kp.a, kp.b) != (1.0, 1.0)
    kp = preset("gdr").kernel_params()
    assert (kp.a, kp.b) == (1.0, 1.0)


@pytest.mark.parametrize("switch", SWEEP_SWITCHES)
def test_swap_flips_exactly_one_field(switch):
    base = preset("gdr")
    diff = {k for k, v in swap(base, switch).to_dict().items() if base.to_dict()[k] != v}
    assert len(diff) == 1
    assert swap(swap(base, switch), switch) == base


def test_swapped_presets_validate():
    for name in ("tsne", "umap", "gdr", "gdr_normalized"):
        for sw in SWEEP_SWITCHES:
            swap(engine_config(name), sw).validate()


def test_config_hash_tracks_resolved_values():
    a = preset("gdr")
    assert a.config_hash() == replace(a, lr=a.resolved().lr).config_hash()
    assert a.config_hash() != replace(a, seed=1).config_hash()


def test_from_dict_round_trip_and_unknown_keys():
    cfg = preset("tsne")
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown config keys"):
        PipelineConfig.from_dict({"bogus": 1})


def test_generators():
    d = generate("blobs:n=100,c=4,dim=3,seed=2")
    assert d.n == 100 and d.dim == 3 and len(np.unique(d.labels)) == 4
    assert generate("swiss_roll:n=200").dim == 3
    with pytest.raises(ValueError):
        generate("blobs:size=3")
    with pytest.raises(ValueError):
        generate("moons")


def test_k_must_be_below_n():
    d = generate("blobs:n=10,c=2,dim=2")
    with pytest.raises(ValueError, match="k=15"):
        run_pipeline(d, preset("gdr"))


# -- CLI


def test_cli_conflict_names_flags(capsys):
    rc = main(["reduce", "--generator", "blobs:n=100", "--preset", "umap", "--normalized", "true"])
    err = capsys.readouterr().err
    assert rc == 2
    assert "--sampling" in err and "--normalized" in err


def test_cli_amplify_conflict(capsys):
    rc = main(["reduce", "--generator", "blobs:n=100", "--amplify", "true"])
    assert rc == 2
    assert "--amplify" in capsys.readouterr().err


def test_cli_needs_one_source(capsys):
    assert main(["reduce"]) == 2
    assert main(["reduce", "--dataset", "x.csv", "--generator", "blobs"]) == 2


def test_config_file_precedence(tmp_path, capsys):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"preset": "gdr", "epochs": 7, "seed": 3}))
    out = tmp_path / "o"
    assert main(["reduce", "--generator", "blobs:n=120,c=2,dim=4", "--config", str(cfg_file),
                 "--seed", "5", "--out", str(out)]) == 0
    rep = json.loads(next(out.glob("*.report.json")).read_text())
    assert rep["config"]["epochs"] == 7 and rep["config"]["seed"] == 5


@pytest.fixture(scope="module")
def reduced(tmp_path_factory):
    out = tmp_path_factory.mktemp("reduce")
    assert main(["reduce", "--generator", "blobs:n=300,c=3,dim=5", "--epochs", "30",
                 "--out", str(out)]) == 0
    return out


def test_reduce_writes_all_outputs(reduced):
    names = sorted(p.suffix for p in reduced.iterdir())
    assert names == [".csv", ".json", ".jsonl", ".svg"]
    rep = RunReport.from_json(next(reduced.glob("*.report.json")))
    assert all(rep.config_hash in p.name for p in reduced.iterdir())
    assert set(rep.timings) >= {"knn_ms", "affinity_ms", "init_ms", "optimize_ms", "total_ms"}
    assert rep.metrics["k_used"] == 100


def test_rerun_is_bitwise_identical(reduced, tmp_path):
    report = next(reduced.glob("*.report.json"))
    assert main(["reduce", "--from-report", str(report), "--out", str(tmp_path)]) == 0
    for suffix in (".csv", ".svg"):
        a = next(reduced.glob(f"*{suffix}")).read_bytes()
        b = next(tmp_path.glob(f"*{suffix}")).read_bytes()
        assert a == b


def test_rerun_detects_changed_data(tmp_path):
    csv = tmp_path / "d.csv"
    np.savetxt(csv, np.random.default_rng(0).normal(size=(60, 3)), delimiter=",")
    cfg = preset("gdr", epochs=5)
    src = {"dataset": str(csv)}
    _, rep = run_pipeline(load_source(**src), cfg, source=src, metrics=False)
    np.savetxt(csv, np.random.default_rng(1).normal(size=(60, 3)), delimiter=",")
    with pytest.raises(ValueError, match="changed"):
        rerun(rep)


# -- plots


def _colors(svg):
    return {c for c in re.findall(r"#[0-9a-f]{6}", svg.lower()) if c in PALETTE}


def test_plot_three_classes(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.normal(size=(90, 2))
    path = plot_embedding(y, np.repeat([0, 1, 2], 30), tmp_path / "a.svg")
    assert len(_colors(Path(path).read_text())) == 3


def test_plot_bytes_deterministic(tmp_path):
    y = np.random.default_rng(1).normal(size=(200, 2))
    lab = np.arange(200) % 4
    a = Path(plot_embedding(y, lab, tmp_path / "a.svg")).read_bytes()
    b = Path(plot_embedding(y, lab, tmp_path / "b.svg")).read_bytes()
    assert a == b


def test_plot_downsamples_large(tmp_path):
    y = np.random.default_rng(2).normal(size=(60_000, 2))
    path = plot_embedding(y, None, tmp_path / "big.svg", max_points=2000)
    assert Path(path).read_text().count("<use ") == 2000


def test_plot_rejects_3d(tmp_path):
    with pytest.raises(ValueError, match="2-D"):
        plot_embedding(np.zeros((10, 3)), None, tmp_path / "x.svg")
