import csv
import io
import json
import os

import pytest
import torch

from morphopolicy.cli import main
from morphopolicy.policy import load_checkpoint
from morphopolicy.training import ExperimentConfig, run_experiment

PANDA_ROW = dict(type_pris=0, type_rev=1, ax=0, ay=0, az=1, hard_lower=-2.9671, hard_upper=2.9671,
             damping_log=6.90776, friction_anchor=1, lateral_friction=1, spinning_friction=0.1,
             stiffness_log=10.30895)


def tiny_config(tmp_path, steps=3, **policy):
    doc = {
        "name": "tiny",
        "policy": {"d": 16, "L": 2, "heads": 2, "H": 8, "J_max": 4, "obs_dim": 4, **policy},
        "train": {"steps": steps, "batch_size": 4},
        "embodiments": [{"robot": "chain:3", "n_train": 16, "n_val": 4}],
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestGraph:
    def test_chain3(self, robots_dir, capsys):
        assert main(["graph", os.path.join(robots_dir, "chain3.json")]) == 0
        assert "d_max=2" in capsys.readouterr().out.splitlines()[0]

    def test_panda_row_fields(self, robots_dir, capsys):
        assert main(["graph", os.path.join(robots_dir, "panda_like.json")]) == 0
        line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("joint 1:")][0]
        values = dict(tok.split("=") for tok in line.split(":", 1)[1].split())
        assert len(values) == 12
        for k, v in PANDA_ROW.items():
            assert float(values[k]) == v

    def test_missing_file(self, tmp_path, capsys):
        assert main(["graph", str(tmp_path / "nope.json")]) != 0
        err = capsys.readouterr().err
        assert "spec not found" in err and len(err.strip().splitlines()) == 1

    def test_json_out(self, robots_dir, tmp_path):
        out = tmp_path / "g.json"
        main(["graph", os.path.join(robots_dir, "star3.json"), "--out", str(out), "--seed", "4"])
        doc = json.loads(out.read_text())
        assert doc["d_max"] == 2 and doc["seed"] == 4 and doc["spd"][1][2] == 2


class TestMask:
    def run(self, capsys, *args):
        assert main(["mask", *args]) == 0
        return json.loads(capsys.readouterr().out)

    def test_full_layer0(self, robots_dir, capsys):
        doc = self.run(capsys, os.path.join(robots_dir, "chain3.json"), "--mode", "full", "--layer", "0")
        assert doc["matrix"] == [[0.0, 0.0, "-inf"], [0.0, 0.0, 0.0], ["-inf", 0.0, 0.0]]

    def test_mix_layer1(self, robots_dir, capsys):
        doc = self.run(capsys, os.path.join(robots_dir, "chain4.json"), "--mode", "mix", "--layer", "1")
        assert all(v == 0 for row in doc["matrix"] for v in row)

    def test_spd_linear(self, robots_dir, capsys):
        doc = self.run(capsys, os.path.join(robots_dir, "chain4.json"), "--mode", "spd", "--init", "linear")
        assert doc["matrix"][0] == [0.0, 0.0, -1.5, -3.0]

    def test_sequence(self, robots_dir, capsys):
        doc = self.run(capsys, os.path.join(robots_dir, "chain3.json"), "--mode", "full", "--sequence",
                       "--n-obs", "1", "--n-action", "2", "--G", "2", "--compact")
        assert len(doc["sequence_mask"]) == 1 + 2 + 3 * 2

    def test_init_rejected_for_hard(self, robots_dir, capsys):
        assert main(["mask", os.path.join(robots_dir, "chain3.json"), "--mode", "full", "--init", "mix"]) == 1
        assert "not valid" in capsys.readouterr().err

    def test_layer_out_of_range(self, robots_dir, capsys):
        assert main(["mask", os.path.join(robots_dir, "chain3.json"), "--mode", "full", "--layer", "5"]) == 1


class TestEval:
    def test_wilson(self, capsys):
        assert main(["eval", "--k", "59", "--n", "300"]) == 0
        assert capsys.readouterr().out.strip() == "19.7 ± 4.5"

    def test_macro(self, capsys):
        main(["eval", "--macro", "0.21", "0.10"])
        assert capsys.readouterr().out.strip() == "0.155"

    def test_needs_args(self, capsys):
        assert main(["eval"]) == 1

    def test_reports(self, tmp_path, capsys):
        paths = []
        for name, v in (("a", 0.2), ("b", 0.1)):
            p = tmp_path / f"{name}.json"
            p.write_text(json.dumps({"name": name, "mean_val_loss": v, "seed": 0, "schema_version": 1}))
            paths.append(str(p))
        assert main(["eval", "--reports", *paths, "--out", str(tmp_path / "sum")]) == 0
        rows = list(csv.DictReader(io.StringIO((tmp_path / "sum.csv").read_text())))
        assert [r["best"] for r in rows] == ["False", "True"]


class TestTrain:
    def test_zero_steps_equals_init(self, tmp_path):
        cfg = tiny_config(tmp_path, kt_enabled=True, mask_mode="mix_mask", film_enabled=True)
        assert main(["train", cfg, "--init-only", "--out", str(tmp_path / "init")]) == 0
        assert main(["train", cfg, "--steps", "0", "--out", str(tmp_path / "zero")]) == 0
        a = load_checkpoint(tmp_path / "init" / "checkpoint.json")
        b = load_checkpoint(tmp_path / "zero" / "checkpoint.json")
        for (n, p), (_, q) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(p, q), n

    def test_artifacts_and_replay(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = tmp_path / "run"
        assert main(["train", cfg, "--out", str(out), "--seed", "3"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["seed"] == 3 and report["config"]["train"]["seed"] == 3
        metrics = (out / "metrics.csv").read_text()
        assert metrics.endswith("\n") and metrics.splitlines()[0] == "step,lr,loss,embodiment_id"
        ckpt = json.loads((out / "checkpoint.json").read_text())
        assert ckpt["extra"]["experiment"] == report["config"]
        replay, _ = run_experiment(ExperimentConfig.from_dict(report["config"]))
        assert replay.metrics_csv == metrics

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MORPHOPOLICY_OUT", str(tmp_path / "envout"))
        assert main(["train", tiny_config(tmp_path, steps=1)]) == 0
        assert (tmp_path / "envout" / "metrics.csv").exists()

    def test_invalid_config_lists_errors(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"policy": {"d": 10, "heads": 3, "G": 3}}))
        assert main(["train", str(path)]) == 1
        err = capsys.readouterr().err
        assert "heads" in err and "G=3" in err

    def test_missing_config(self, tmp_path, capsys):
        assert main(["train", str(tmp_path / "x.json")]) == 1
        assert "config not found" in capsys.readouterr().err

    def test_gen(self, tmp_path):
        assert main(["gen", tiny_config(tmp_path), "--out", str(tmp_path / "d")]) == 0
        doc = json.loads((tmp_path / "d" / "data_chain3.json").read_text())
        assert len(doc["train"]["obs"]) == 16 and len(doc["val"]["actions"][0]) == 8


def test_ablate_chunk_sweep(configs_dir, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", os.path.join(configs_dir, "ablate_chunk.json"), "--steps", "2", "--out", str(out)]) == 0
    reports = sorted(p for p in os.listdir(out) if p.startswith("report_"))
    assert len(reports) == 5
    gs = sorted(json.loads((out / r).read_text())["config"]["policy"]["G"] for r in reports)
    assert gs == [1, 2, 4, 8, 16]
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["rows"]) == 5 and sum(r["best"] for r in summary["rows"]) >= 1
