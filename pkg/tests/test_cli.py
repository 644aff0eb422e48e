import json
from pathlib import Path

import pytest

from crowdloop.cli import main
from crowdloop.datastore import load_features, load_manifest
from crowdloop.workers import SkillBank

TINY_CONFIG = {
    "method": "full",
    "seed": 7,
    "dataset": {"synthetic": {"k": 2, "n_per_class": 10, "dim": 3,
                              "separation": 6.0, "prototypes_per_class": 2}},
    "workers": {"kind": "uniform", "n_workers": 3, "uniform_accuracy": 0.9},
    "loop": {"batch_size": 8, "max_steps": 12},
    "train": {"epochs": 4, "batch_size": 8, "hidden_dim": 8},
}


def write_config(tmp_path, doc=None, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc or TINY_CONFIG))
    return path


class TestGenSynthetic:
    def test_outputs_load(self, tmp_path):
        out = tmp_path / "data"
        code = main(["gen-synthetic", "--k", "3", "--n-per-class", "4",
                     "--dim", "3", "--prototypes", "2", "--seed", "1",
                     "--out", str(out)])
        assert code == 0
        store = load_features(out / "features.bin")
        manifest = load_manifest(out / "manifest.json")
        assert store.n_items == manifest.n_items == 12

    def test_group_size_flag(self, tmp_path):
        out = tmp_path / "data"
        main(["gen-synthetic", "--k", "4", "--n-per-class", "3",
              "--dim", "3", "--prototypes", "2", "--group-size", "2",
              "--seed", "1", "--out", str(out)])
        manifest = load_manifest(out / "manifest.json")
        assert manifest.groups == [[0, 1], [2, 3]]


class TestSimulateWorkers:
    def test_bank_round_trip(self, tmp_path):
        data = tmp_path / "data"
        main(["gen-synthetic", "--k", "4", "--n-per-class", "3",
              "--dim", "3", "--prototypes", "2", "--group-size", "2",
              "--seed", "1", "--out", str(data)])
        bank_path = tmp_path / "bank.json"
        code = main(["simulate-workers", "--manifest",
                     str(data / "manifest.json"), "--workers-per-group", "2",
                     "--seed", "3", "--out", str(bank_path)])
        assert code == 0
        bank = SkillBank.from_json(bank_path)
        assert len(bank.workers) == 4
        assert bank.groups == [[0, 1], [2, 3]]


class TestRun:
    def run_once(self, tmp_path, name, seed=None):
        cfg = write_config(tmp_path)
        out = tmp_path / name
        argv = ["run", "--config", str(cfg), "--out", str(out)]
        if seed is not None:
            argv += ["--seed", str(seed)]
        assert main(argv) == 0
        return out

    def test_outputs_exist(self, tmp_path):
        out = self.run_once(tmp_path, "run1")
        for name in ("metrics.csv", "summary.json", "annotations.jsonl",
                     "residual.json", "config.json", "skills.json",
                     "state.json", "model.bin", "model.json"):
            assert (out / name).exists(), name

    def test_same_seed_byte_identical(self, tmp_path):
        a = self.run_once(tmp_path, "run-a", seed=42)
        b = self.run_once(tmp_path, "run-b", seed=42)
        for name in ("metrics.csv", "summary.json", "annotations.jsonl",
                     "residual.json", "config.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_seed_override_changes_run(self, tmp_path):
        a = self.run_once(tmp_path, "run-a", seed=1)
        b = self.run_once(tmp_path, "run-b", seed=2)
        assert (a / "annotations.jsonl").read_bytes() != \
            (b / "annotations.jsonl").read_bytes()

    def test_online_ds_writes_no_model_files(self, tmp_path):
        doc = dict(TINY_CONFIG, method="online_ds")
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "ds"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert not (out / "model.bin").exists()
        assert not (out / "model.json").exists()

    def test_missing_config_fails_with_usage(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")])
        assert code != 0
        err = capsys.readouterr().err
        assert "usage:" in err

    def test_invalid_config_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"loop": {"risk_threshold": 2.0}})
        code = main(["run", "--config", str(cfg),
                     "--out", str(tmp_path / "o")])
        assert code != 0
        assert "risk_threshold" in capsys.readouterr().err

    def test_config_echo_reproduces_run(self, tmp_path):
        first = self.run_once(tmp_path, "first", seed=9)
        echoed = json.loads((first / "config.json").read_text())
        cfg2 = write_config(tmp_path, echoed, name="echo.json")
        out2 = tmp_path / "second"
        assert main(["run", "--config", str(cfg2),
                     "--out", str(out2)]) == 0
        assert (first / "metrics.csv").read_bytes() == \
            (out2 / "metrics.csv").read_bytes()


class TestReport:
    def test_worker_importance_emitted(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["report", "--run", str(out)]) == 0
        report = (out / "worker_importance.csv").read_text()
        lines = [l for l in report.splitlines() if not l.startswith("#")]
        assert lines[0] == "worker,annotations,reliability,importance"
        assert len(lines) == 4  # header + 3 workers
