"""End-to-end command checks: exit codes, artifacts, and idempotence."""

import hashlib
import io
import json

import pytest

from cfmsa.cli import main


def digest_tree(directory):
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(directory.iterdir())
        if p.is_file()
    }


SYNTH_ARGS = [
    "synth",
    "--n-train", "60",
    "--n-val", "20",
    "--n-test", "30",
    "--seed", "5",
    "--no-timestamp",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A synth run plus a small training run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    assert main(SYNTH_ARGS + ["--out", str(data)]) == 0
    train_args = [
        "train",
        "--data", str(data),
        "--out", str(run),
        "--epochs", "2",
        "--hidden-dim", "0",
        "--seed", "5",
        "--no-timestamp",
    ]
    assert main(train_args) == 0
    return data, run


class TestSynth:
    def test_writes_three_files_with_matching_headers(self, workspace):
        data, _ = workspace
        for name in ("train", "val", "test"):
            header = json.loads((data / f"{name}.jsonl").read_text().splitlines()[0])
            assert header["schema"] == "cfmsa-features/1"
            assert header["d_t"] == 16 and header["d_i"] == 16
        assert (data / "run_config.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        out = tmp_path / "a"
        assert main(SYNTH_ARGS + ["--out", str(out)]) == 0
        first = digest_tree(out)
        assert main(SYNTH_ARGS + ["--out", str(out)]) == 0
        assert digest_tree(out) == first

    def test_invalid_rho_exits_2_naming_field(self, tmp_path, capsys):
        code = main(["synth", "--out", str(tmp_path / "x"), "--rho", "1.5"])
        assert code == 2
        assert "bias_strength" in capsys.readouterr().err

    def test_missing_out_exits_2(self):
        assert main(["synth", "--rho", "0.5"]) == 2


class TestTrain:
    def test_missing_data_exits_2(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2

    def test_artifacts_written(self, workspace):
        _, run = workspace
        ckpt = json.loads((run / "checkpoint.json").read_text())
        assert ckpt["schema_version"] == "cfmsa-checkpoint/1"
        assert ckpt["run_config"]["command"] == "train"
        lines = (run / "history.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["type"] == "run_config"
        epochs = [json.loads(l) for l in lines[1:]]
        assert len(epochs) == 2
        assert "val_accuracy" in epochs[0]

    def test_rerun_reproduces_checkpoint_digest(self, workspace):
        data, run = workspace
        before = hashlib.sha256((run / "checkpoint.json").read_bytes()).hexdigest()
        args = [
            "train",
            "--data", str(data),
            "--out", str(run),
            "--epochs", "2",
            "--hidden-dim", "0",
            "--seed", "5",
            "--no-timestamp",
        ]
        assert main(args) == 0
        after = hashlib.sha256((run / "checkpoint.json").read_bytes()).hexdigest()
        assert before == after

    def test_bad_epochs_exit_2(self, workspace, tmp_path):
        data, _ = workspace
        assert main(["train", "--data", str(data), "--out", str(tmp_path / "o"), "--epochs", "0"]) == 2


class TestEval:
    def test_full_report(self, workspace, tmp_path, capsys):
        data, run = workspace
        out = tmp_path / "eval"
        code = main([
            "eval",
            "--checkpoint", str(run / "checkpoint.json"),
            "--data", str(data / "test.jsonl"),
            "--modes", "all",
            "--out", str(out),
            "--no-timestamp",
        ])
        assert code == 0
        printed = capsys.readouterr().out
        for mode in ("te", "tie-text", "tie-image", "tie-joint"):
            assert mode in printed
        report = json.loads((out / "report.json").read_text())
        assert set(report["report"]["modes"]) == {"te", "tie-text", "tie-image", "tie-joint"}

    def test_idempotent_outputs(self, workspace, tmp_path):
        data, run = workspace
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert main([
                "eval",
                "--checkpoint", str(run / "checkpoint.json"),
                "--data", str(data / "test.jsonl"),
                "--out", str(out),
                "--no-timestamp",
            ]) == 0
            outs.append(digest_tree(out))
        assert outs[0] == outs[1]

    def test_unknown_mode_exits_2(self, workspace, tmp_path):
        data, run = workspace
        assert main([
            "eval",
            "--checkpoint", str(run / "checkpoint.json"),
            "--data", str(data / "test.jsonl"),
            "--modes", "tie-audio",
        ]) == 2

    def test_missing_checkpoint_exits_2(self, workspace, tmp_path):
        data, _ = workspace
        assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--data", str(data / "test.jsonl")]) == 2


class TestInfer:
    def test_by_sample_id(self, workspace, capsys):
        data, run = workspace
        code = main([
            "infer",
            "--checkpoint", str(run / "checkpoint.json"),
            "--data", str(data / "test.jsonl"),
            "--id", "test-00000",
            "--no-timestamp",
        ])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["id"] == "test-00000"
        assert all(doc["modes"][m]["available"] for m in doc["modes"])
        assert len(doc["modes"]["te"]["scores"]) == 3

    def test_null_image_marks_tie_modes_unavailable(self, workspace, capsys, monkeypatch):
        _, run = workspace
        record = {"id": "stdin-1", "text": [0.1] * 16, "image": None}
        monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps(record)))
        code = main(["infer", "--checkpoint", str(run / "checkpoint.json"), "--no-timestamp"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["modes"]["te"]["available"] is True
        for mode in ("tie-text", "tie-image", "tie-joint"):
            assert doc["modes"][mode]["available"] is False
            assert "image" in doc["modes"][mode]["reason"]

    def test_unknown_id_exits_2(self, workspace):
        data, run = workspace
        assert main([
            "infer",
            "--checkpoint", str(run / "checkpoint.json"),
            "--data", str(data / "test.jsonl"),
            "--id", "missing-id",
        ]) == 2

    def test_wrong_dims_on_stdin_exit_2(self, workspace, monkeypatch):
        _, run = workspace
        record = {"id": "bad", "text": [0.1] * 3, "image": None}
        monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps(record)))
        assert main(["infer", "--checkpoint", str(run / "checkpoint.json")]) == 2


class TestGradcheckCommand:
    def test_passes_and_writes_report(self, tmp_path, capsys):
        out = tmp_path / "gc"
        code = main([
            "gradcheck",
            "--points", "5",
            "--seed", "1",
            "--out", str(out),
            "--no-timestamp",
        ])
        assert code == 0
        assert "PASS" in capsys.readouterr().out
        doc = json.loads((out / "gradcheck.json").read_text())
        assert all(r["passed"] for r in doc["results"])

    def test_bad_points_exits_2(self):
        assert main(["gradcheck", "--points", "0"]) == 2


class TestConfigFile:
    def test_config_file_overridden_by_flags(self, tmp_path):
        cfg = tmp_path / "conf.json"
        cfg.write_text(json.dumps({"n_train": 40, "n_val": 10, "n_test": 10, "seed": 1}))
        out = tmp_path / "from-config"
        assert main(["synth", "--config", str(cfg), "--out", str(out), "--seed", "2", "--no-timestamp"]) == 0
        echoed = json.loads((out / "run_config.json").read_text())
        assert echoed["options"]["n_train"] == 40  # from file
        assert echoed["options"]["seed"] == 2  # flag wins

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "conf.json"
        cfg.write_text(json.dumps({"n_trian": 40}))
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "n_trian" in capsys.readouterr().err
