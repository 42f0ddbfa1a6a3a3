import json

import pytest

from vibrec.cli import main


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--out", str(out), "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, generated):
    out = tmp_path_factory.mktemp("train")
    rc = main(
        [
            "train",
            "--records",
            str(generated / "records.csv"),
            "--out",
            str(out),
            "--variant",
            "cnn_a",
            "--mask",
            "5",
            "--ws",
            "64",
            "--epochs",
            "2",
            "--seed",
            "0",
        ]
    )
    assert rc == 0
    return out


class TestGenerate:
    def test_emits_expected_dimensions(self, generated):
        lines = (generated / "records.csv").read_text().strip().splitlines()
        assert lines[0].startswith("# dt=0.0078125 channels=30")
        assert len(lines) == 1 + 2048
        assert len(lines[1].split(",")) == 30

    def test_byte_identical_rerun(self, generated, tmp_path):
        assert main(["generate", "--out", str(tmp_path), "--seed", "0"]) == 0
        assert (tmp_path / "records.csv").read_bytes() == (
            generated / "records.csv"
        ).read_bytes()
        assert (tmp_path / "ground_truth.json").read_bytes() == (
            generated / "ground_truth.json"
        ).read_bytes()

    def test_manifest_written(self, generated):
        doc = json.loads((generated / "manifest_generate.json").read_text())
        assert doc["command"] == "generate"
        assert doc["config"]["seed"] == 0


class TestTrain:
    def test_outputs(self, trained):
        lines = (trained / "convergence.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,train_rmse,train_mae,val_rmse,val_mae"
        assert len(lines) == 3
        assert (trained / "checkpoint.json").exists()

    def test_arity_mismatch_is_config_error(self, generated, tmp_path):
        rc = main(
            [
                "train",
                "--records",
                str(generated / "records.csv"),
                "--out",
                str(tmp_path),
                "--variant",
                "cnn_c",
                "--mask",
                "5",
                "--epochs",
                "1",
            ]
        )
        assert rc == 2

    def test_missing_records_is_io_error(self, tmp_path):
        rc = main(
            [
                "train",
                "--records",
                str(tmp_path / "nope.csv"),
                "--out",
                str(tmp_path),
                "--epochs",
                "1",
            ]
        )
        assert rc == 5

    def test_rerun_byte_identical(self, generated, trained, tmp_path):
        rc = main(
            [
                "train",
                "--records",
                str(generated / "records.csv"),
                "--out",
                str(tmp_path),
                "--variant",
                "cnn_a",
                "--mask",
                "5",
                "--ws",
                "64",
                "--epochs",
                "2",
                "--seed",
                "0",
            ]
        )
        assert rc == 0
        assert (tmp_path / "convergence.csv").read_bytes() == (
            trained / "convergence.csv"
        ).read_bytes()
        assert (tmp_path / "checkpoint.json").read_bytes() == (
            trained / "checkpoint.json"
        ).read_bytes()


class TestRecover:
    def test_four_windows(self, generated, trained, tmp_path):
        rc = main(
            [
                "recover",
                "--records",
                str(generated / "records.csv"),
                "--checkpoint",
                str(trained / "checkpoint.json"),
                "--mask",
                "5",
                "--ws",
                "64",
                "--windows",
                "0,3,7,11",
                "--out",
                str(tmp_path),
            ]
        )
        assert rc == 0
        lines = (tmp_path / "recovery_errors.csv").read_text().strip().splitlines()
        assert len(lines) == 5  # header + 4 windows
        series = (tmp_path / "recovered.csv").read_text().strip().splitlines()
        assert len(series) == 1 + 4 * 30

    def test_out_of_range_window(self, generated, trained, tmp_path):
        rc = main(
            [
                "recover",
                "--records",
                str(generated / "records.csv"),
                "--checkpoint",
                str(trained / "checkpoint.json"),
                "--mask",
                "5",
                "--ws",
                "64",
                "--windows",
                "9999",
                "--out",
                str(tmp_path),
            ]
        )
        assert rc == 2


class TestModal:
    def test_self_comparison(self, generated, tmp_path):
        rc = main(
            [
                "modal",
                "--reference",
                str(generated / "records.csv"),
                "--recovered",
                str(generated / "records.csv"),
                "--out",
                str(tmp_path),
            ]
        )
        assert rc == 0
        text = (tmp_path / "modal_report.csv").read_text()
        assert text.startswith("mode,f_ref_hz,f_rec_hz,error_pct")
        assert "mac," in text


class TestGradcheck:
    def test_cnn_b_passes(self, capsys):
        assert main(["gradcheck", "--variant", "cnn_b", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "pass" in out
        assert "conv" in out  # per-layer report

    def test_zero_threshold_fails(self):
        rc = main(
            ["gradcheck", "--variant", "cnn_b", "--seed", "0", "--threshold", "0"]
        )
        assert rc == 4


class TestConfigFile:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus_key": 1}))
        rc = main(["generate", "--config", str(cfg), "--out", str(tmp_path)])
        assert rc == 2

    def test_config_file_applied(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 7, "duration_s": 8.0}))
        rc = main(["generate", "--config", str(cfg), "--out", str(tmp_path)])
        assert rc == 0
        lines = (tmp_path / "records.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 1024
        doc = json.loads((tmp_path / "manifest_generate.json").read_text())
        assert doc["config"]["seed"] == 7
