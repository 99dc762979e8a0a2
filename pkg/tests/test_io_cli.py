import json
import os

import numpy as np
import pytest

from binode import io
from binode.cli import main
from binode.config import load_config, loads_config
from binode.errors import ConfigError
from binode.model import build_lv_binode, build_ultradian_binode
from binode.odeint import Trajectory
from binode.training import SweepCell, SweepResult


def test_model_round_trip(tmp_path, rng):
    for m in (build_lv_binode(seed=4), build_ultradian_binode(seed=2)):
        m.domain = np.array([[0.0] * m.n, [1.0] * m.n])
        path = tmp_path / "m.json"
        io.save_model(path, m)
        back = io.load_model(path)
        np.testing.assert_array_equal(back.get_params(), m.get_params())
        X = rng.uniform(0.1, 2, (100, m.n))
        np.testing.assert_array_max_ulp(back.vector_field(X, 350.0), m.vector_field(X, 350.0), maxulp=1)
        assert io.dumps_model(back) == io.dumps_model(m)


def test_model_format_checked():
    d = io.model_to_dict(build_lv_binode())
    d["format"] = 99
    with pytest.raises(ValueError):
        io.model_from_dict(d)


def test_trajectory_csv_round_trip(tmp_path, rng):
    tr = Trajectory(np.linspace(0, 1, 11), rng.normal(size=(11, 3)), ("a", "b", "c"))
    io.write_trajectory(tmp_path / "t.csv", tr)
    back = io.read_trajectory(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.times, tr.times)
    assert back.names == ("a", "b", "c")


def test_loss_and_sweep_csv():
    assert io.loss_csv([1.0, 0.5]) == "epoch,loss\n0,1\n1,0.5\n"
    res = SweepResult("t", [SweepCell(2, 1, 0.25, 0.1), SweepCell(1, 2, 0.5, 0.2)])
    lines = io.sweep_csv(res).splitlines()
    assert lines[0] == "layers,width,best_loss,mean_runtime_s"
    assert lines[1].startswith("1,2,") and lines[2].startswith("2,1,")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.atomic_write(tmp_path / "a" / "x.txt", "one")
    io.atomic_write(tmp_path / "a" / "x.txt", b"two")
    assert (tmp_path / "a" / "x.txt").read_text() == "two"
    assert os.listdir(tmp_path / "a") == ["x.txt"]


def test_blob_hash_matches_git():
    # git hash-object of an empty file
    assert io.blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"


def test_config_errors():
    with pytest.raises(ConfigError) as info:
        loads_config('{"format": 1}', "train")
    assert info.value.field == "system"
    with pytest.raises(ConfigError) as info:
        loads_config('{"format": 1, "system": "lv", "bogus": 1}', "train")
    assert info.value.field == "bogus"
    with pytest.raises(ConfigError) as info:
        loads_config('{"format": 1,\n "system": }', "train")
    assert "line 2" in str(info.value)
    with pytest.raises(ConfigError):
        loads_config('{"format": 1, "system": "lv", "train": {"lr": 5}}', "train")
    cfg = loads_config('{"format": 1, "target": {"law": "hill", "params": {"V_max": 1, "K_m": 1, "h": 2},'
                       ' "lo": [0], "hi": [3]}}', "fit_surface")
    assert cfg.target.hi == (3.0,) and cfg.dataset["count"] == 1000


def test_shipped_configs_parse():
    for name in ("monod", "lv", "pk", "ultradian"):
        assert load_config(name, "train").system == name
    assert load_config("sweep", "sweep").grid["restarts"] == 10
    assert load_config("fit_surface", "fit_surface").model["layers"] == 3


def test_cli_simulate(tmp_path, capsys):
    assert main(["simulate", "pk", "--out", str(tmp_path)]) == 0
    header, data, _ = io.read_csv(tmp_path / "pk_traj0.csv")
    assert header == ["t", "x1", "x2", "x3"]
    assert data.shape == (201, 4)
    assert abs(data[-1, 1:].sum() - 0.1) < 1e-9
    assert main(["simulate", "monod", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.glob("monod_traj*.csv")) == [f"monod_traj{i}.csv" for i in range(3)]
    assert "steps=240" in capsys.readouterr().out
    assert main(["simulate", "nosuch", "--out", str(tmp_path)]) == 2
    assert "unknown system" in capsys.readouterr().err


def _small_train_config(path, **train):
    cfg = {"format": 1, "system": "pk", "model": {"layers": 2, "width": 2, "seed": 0},
           "train": {"batch_size": 5, "horizon": 3, "epochs": 30, **train}}
    path.write_text(json.dumps(cfg))
    return path


def test_cli_train_is_byte_reproducible(tmp_path):
    cfg = _small_train_config(tmp_path / "c.json")
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
    for name in ("model.json", "loss.csv", "pk_traj0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["status"] == "ok" and report["epochs"] == 30
    assert report["model_hash"] == io.blob_hash((tmp_path / "a" / "model.json").read_bytes())
    assert report["input_hash"]["config"] == io.blob_hash(cfg.read_bytes())
    assert report["config"]["system"] == "pk"


def test_cli_train_missing_field(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"format": 1, "train": {}}')
    assert main(["train", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "system" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 4


def test_cli_surface(tmp_path):
    model = build_lv_binode(seed=0, layers=2, width=2)
    model.domain = np.array([[0.3, 0.3], [2.0, 2.0]])
    io.save_model(tmp_path / "m.json", model)
    out = tmp_path / "s.csv"
    assert main(["surface", str(tmp_path / "m.json"), "--process", "3", "--axes", "1,2",
                 "--reference", "lv.predation_prey", "-o", str(out)]) == 0
    header, data, comments = io.read_csv(out)
    assert header == ["x1", "x2", "value", "reference"] and data.shape == (625, 4)
    np.testing.assert_allclose(data[:, 3], -data[:, 0] * data[:, 1], rtol=1e-15)
    assert any(c.startswith("process=3") for c in comments)
    assert main(["surface", str(tmp_path / "m.json"), "--process", "1", "--axes", "1", "--points", "1",
                 "-o", str(out)]) == 0
    header, data, _ = io.read_csv(out)
    assert header == ["x", "value"] and data.shape == (1, 2)


def test_cli_sweep_and_fit_surface(tmp_path):
    sweep = tmp_path / "sw.json"
    sweep.write_text(json.dumps({"format": 1, "target": "hill3", "grid": {"max_layers": 2, "max_width": 2,
                                                                         "restarts": 2},
                                 "dataset": {"count": 100}, "train": {"epochs": 20}}))
    assert main(["sweep", "--config", str(sweep), "--out", str(tmp_path)]) == 0
    header, data, _ = io.read_csv(tmp_path / "sweep.csv")
    assert header == ["layers", "width", "best_loss", "mean_runtime_s"]
    assert data[:, :2].tolist() == [[1, 1], [1, 2], [2, 1], [2, 2]]
    assert np.all(data[:, 3] > 0)
    fit = tmp_path / "fit.json"
    fit.write_text(json.dumps({"format": 1, "target": "haldane", "model": {"layers": 1, "width": 2},
                               "dataset": {"count": 50}, "train": {"epochs": 10}}))
    assert main(["fit-surface", "--config", str(fit), "--out", str(tmp_path / "f")]) == 0
    net = io.load_nnp(tmp_path / "f" / "nnp.json")
    assert net.spec.hidden_layers == 1 and net.spec.hidden_width == 2


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BINODE_OUT", str(tmp_path / "env"))
    assert main(["simulate", "lv", "--t1", "1"]) == 0
    assert (tmp_path / "env" / "lv_traj2.csv").exists()
