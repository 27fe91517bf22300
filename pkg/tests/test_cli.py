"""CLI commands end to end, in process, against the exit-code contract."""

import json
import subprocess
import sys

import pytest

from addressee.cli import main
from addressee.core import TrainingError
from addressee.nn import ModelConfig, load_weights
from addressee.pipeline import EquivalenceReport

TINY_MODEL = {"face_size": 24, "conv_channels": [2], "face_embed": 8,
              "n_keypoints": 18, "pose_hidden": [8], "fused_dim": 8,
              "lstm_hidden": 8}
FAST_TRAIN = {"epochs": 2, "batch_size": 8, "seed": 1}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One gen -> train chain shared by the read-only command tests."""
    root = tmp_path_factory.mktemp("cli")
    scenario = root / "scenario.json"
    scenario.write_text(json.dumps({"n_utterances": 12, "seed": 7,
                                    "utterance_len_ms": [400, 1600]}))
    model_cfg = root / "model.json"
    model_cfg.write_text(json.dumps(TINY_MODEL))
    train_cfg = root / "train.json"
    train_cfg.write_text(json.dumps(FAST_TRAIN))

    data = root / "data"
    assert main(["gen", "--config", str(scenario), "--out", str(data)]) == 0
    weights = root / "model.aew"
    assert main(["train", "--data", str(data), "--model-config", str(model_cfg),
                 "--train-config", str(train_cfg), "--out", str(weights)]) == 0
    return {"root": root, "scenario": scenario, "model_cfg": model_cfg,
            "train_cfg": train_cfg, "data": data, "weights": weights}


class TestGen:
    def test_outputs_and_manifest(self, work):
        dataset = work["data"] / "dataset.jsonl"
        assert dataset.is_file()
        manifest = json.loads((work["data"] / "manifest.json").read_text())
        assert manifest["command"] == "gen"
        assert manifest["outputs"]["dataset.jsonl"]["sha256"]
        assert manifest["config"]["scenario"]["seed"] == 7

    def test_rerun_is_byte_identical(self, work, tmp_path):
        out2 = tmp_path / "data2"
        assert main(["gen", "--config", str(work["scenario"]), "--out", str(out2)]) == 0
        assert ((out2 / "dataset.jsonl").read_bytes()
                == (work["data"] / "dataset.jsonl").read_bytes())

    def test_invalid_json_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_config_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"n_utterances": 5, "fps": 30}))
        assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_missing_config_file_exits_3(self, tmp_path):
        missing = tmp_path / "nowhere.json"
        assert main(["gen", "--config", str(missing), "--out", str(tmp_path / "o")]) == 3


class TestTrain:
    def test_outputs(self, work):
        weights = work["weights"]
        assert weights.is_file()
        history = weights.with_name(weights.name + ".history.csv")
        lines = history.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_accuracy"
        assert len(lines) == 1 + FAST_TRAIN["epochs"]
        sidecar = json.loads(
            weights.with_name(weights.name + ".manifest.json").read_text())
        assert sidecar["config"]["model_config"] == ModelConfig.from_dict(TINY_MODEL).to_dict()

    def test_weights_load_back(self, work):
        model = load_weights(work["weights"], ModelConfig.from_dict(TINY_MODEL))
        assert set(model.weights)

    def test_rerun_is_byte_identical(self, work, tmp_path):
        out2 = tmp_path / "again.aew"
        assert main(["train", "--data", str(work["data"]),
                     "--model-config", str(work["model_cfg"]),
                     "--train-config", str(work["train_cfg"]),
                     "--out", str(out2)]) == 0
        assert out2.read_bytes() == work["weights"].read_bytes()
        h1 = work["weights"].with_name("model.aew.history.csv").read_bytes()
        h2 = out2.with_name("again.aew.history.csv").read_bytes()
        assert h1.split(b"\n", 1)[1] == h2.split(b"\n", 1)[1]

    def test_bad_val_fraction_exits_2(self, work, tmp_path):
        assert main(["train", "--data", str(work["data"]),
                     "--val-fraction", "1.5",
                     "--out", str(tmp_path / "w.aew")]) == 2

    def test_missing_dataset_exits_3(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "w.aew")]) == 3

    def test_training_error_exits_4(self, work, tmp_path, monkeypatch):
        import addressee.cli as cli_module

        def boom(*args, **kwargs):
            raise TrainingError("training diverged at epoch 1")
        monkeypatch.setattr(cli_module, "train", boom)
        assert main(["train", "--data", str(work["data"]),
                     "--model-config", str(work["model_cfg"]),
                     "--out", str(tmp_path / "w.aew")]) == 4


class TestEval:
    def test_outputs(self, work, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", "--data", str(work["data"]),
                     "--weights", str(work["weights"]), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["granularity_reports"]) == {"sequence", "utterance",
                                                      "first_sequence"}
        seq = report["granularity_reports"]["sequence"]
        assert set(seq["per_class_f1"]) == {"ROBOT", "LEFT", "RIGHT"}
        for g in ("sequence", "utterance", "first_sequence"):
            csv_text = (out / f"confusion_{g}.csv").read_text()
            assert csv_text.startswith("true\\predicted,ROBOT,LEFT,RIGHT")
        for svg in ("f1_granularities.svg", "f1_per_class.svg"):
            assert (out / svg).read_text().lstrip().startswith("<svg")

    def test_sidecar_config_resolution(self, work, tmp_path):
        # no --model-config: the weights' sidecar manifest supplies TINY_MODEL
        out = tmp_path / "eval"
        assert main(["eval", "--data", str(work["data"]),
                     "--weights", str(work["weights"]), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model_config"]["lstm_hidden"] == 8

    def test_rerun_report_is_byte_identical(self, work, tmp_path):
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        for out in (out1, out2):
            assert main(["eval", "--data", str(work["data"]),
                         "--weights", str(work["weights"]), "--out", str(out)]) == 0
        assert ((out1 / "report.json").read_bytes()
                == (out2 / "report.json").read_bytes())

    def test_wrong_model_config_exits_2(self, work, tmp_path):
        wrong = tmp_path / "wrong.json"
        wrong.write_text(json.dumps({}))  # defaults: hash cannot match TINY weights
        assert main(["eval", "--data", str(work["data"]),
                     "--weights", str(work["weights"]),
                     "--model-config", str(wrong),
                     "--out", str(tmp_path / "e")]) == 2

    def test_missing_weights_exits_3(self, work, tmp_path):
        assert main(["eval", "--data", str(work["data"]),
                     "--weights", str(tmp_path / "none.aew"),
                     "--out", str(tmp_path / "e")]) == 3


class TestStream:
    def test_afap_outputs(self, work, tmp_path):
        out = tmp_path / "stream"
        assert main(["stream", "--data", str(work["data"]),
                     "--weights", str(work["weights"]), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mode"] == "afap"
        assert "wall_time_s" not in summary
        assert summary["frames_emitted"] == (summary["frames_admitted"]
                                             + summary["frames_dropped"]
                                             + summary["frames_gated_out"])
        events = [json.loads(ln) for ln in (out / "events.jsonl").read_text().splitlines()]
        assert events[0]["event"] == "utterance_start"
        assert any(ev["event"] == "utterance_estimate" for ev in events)

    def test_rerun_is_byte_identical(self, work, tmp_path):
        outs = [tmp_path / "s1", tmp_path / "s2"]
        for out in outs:
            assert main(["stream", "--data", str(work["data"]),
                         "--weights", str(work["weights"]), "--out", str(out)]) == 0
        for name in ("events.jsonl", "summary.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_check_writes_equivalence(self, work, tmp_path):
        out = tmp_path / "check"
        assert main(["stream", "--data", str(work["data"]),
                     "--weights", str(work["weights"]), "--check",
                     "--out", str(out)]) == 0
        eq = json.loads((out / "equivalence.json").read_text())
        assert eq["matched"] is True
        assert eq["diffs"] == []

    def test_check_mismatch_exits_5(self, work, tmp_path, monkeypatch):
        import addressee.cli as cli_module
        fake = EquivalenceReport(matched=False, n_utterances=1, n_sequences=1,
                                 diffs=({"utterance_id": "u0", "kind": "sequence"},))
        monkeypatch.setattr(cli_module, "equivalence_check", lambda *a, **k: fake)
        assert main(["stream", "--data", str(work["data"]),
                     "--weights", str(work["weights"]), "--check",
                     "--out", str(tmp_path / "s")]) == 5


class TestCrossval:
    def test_small_run(self, work, tmp_path):
        out = tmp_path / "cv"
        train_cfg = tmp_path / "t.json"
        train_cfg.write_text(json.dumps({"epochs": 1, "batch_size": 8, "seed": 0}))
        assert main(["crossval", "--data", str(work["data"]),
                     "--model-config", str(work["model_cfg"]),
                     "--train-config", str(train_cfg),
                     "--k", "3", "--seed", "2", "--out", str(out)]) == 0

        cv = json.loads((out / "crossval.json").read_text())
        assert cv["k"] == 3
        assert len(cv["folds"]) == 3
        stats = cv["summary"]["utterance"]["weighted_f1"]
        assert set(stats) == {"mean", "sd"}

        assign = json.loads((out / "fold_assignments.json").read_text())
        assert len(assign["fold_of"]) == 12
        assert set(assign["fold_of"].values()) == {0, 1, 2}

        lines = (out / "folds.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 3  # header + k folds x 3 granularities
        for svg in ("f1_granularities.svg", "f1_per_class.svg"):
            assert (out / svg).is_file()

    def test_k_larger_than_dataset_exits_2(self, work, tmp_path):
        assert main(["crossval", "--data", str(work["data"]),
                     "--k", "50", "--out", str(tmp_path / "cv")]) == 2


class TestEntryPoint:
    def test_console_script_help(self):
        out = subprocess.run(["addressee", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for cmd in ("gen", "train", "eval", "crossval", "stream"):
            assert cmd in out.stdout

    def test_module_invocation(self):
        out = subprocess.run([sys.executable, "-m", "addressee.cli", "--version"],
                             capture_output=True, text=True)
        assert out.returncode == 0
