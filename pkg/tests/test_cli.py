import json
import os

import numpy as np
import pytest
import yaml

from vobs.cli import main

BASE_CONFIG = {
    "master_seed": 3,
    "corpus": [
        {"kind": "slalom", "intensity": 0.3, "count": 4, "duration_s": 16},
        {"kind": "step_steer", "intensity": 0.95, "count": 4, "duration_s": 16},
    ],
    "dataset": {"window_len": 50, "train_stride": 4, "val_stride": 8},
    "train": {"epochs": 1, "batch_size": 128},
    "observers": {
        "lstm": {"type": "lstm", "state_noise": True},
        "ekf": {"type": "ekf"},
    },
}


def _write_config(tmp_path, overrides=None, name="cfg.yaml"):
    doc = json.loads(json.dumps(BASE_CONFIG))
    doc["out_dir"] = str(tmp_path / "run")
    for key, value in (overrides or {}).items():
        doc[key] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    """One full simulate/dataset/train pass shared by the read-only tests."""
    tmp_path = tmp_path_factory.mktemp("cli")
    cfg = _write_config(tmp_path)
    assert main(["simulate", "--config", cfg]) == 0
    assert main(["dataset", "--config", cfg]) == 0
    assert main(["train", "--config", cfg]) == 0
    return tmp_path, cfg


class TestSimulate:
    def test_manifest_totals(self, pipeline_run):
        tmp_path, _ = pipeline_run
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["totals"]["n_trajectories"] == 8
        # 16 s at 50 Hz = 800 frames each
        assert manifest["totals"]["n_frames"] == 8 * 800
        assert manifest["regimes"]["low_g"] and manifest["regimes"]["high_g"]

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _write_config(tmp_path)
        assert main(["simulate", "--config", cfg]) == 0
        first = (tmp_path / "run" / "manifest.json").read_bytes()
        files = sorted((tmp_path / "run" / "trajectories").iterdir())
        first_traj = files[0].read_bytes()
        assert main(["simulate", "--config", cfg]) == 0
        assert (tmp_path / "run" / "manifest.json").read_bytes() == first
        assert files[0].read_bytes() == first_traj

    def test_workers_flag_gives_same_output(self, tmp_path):
        cfg1 = _write_config(tmp_path, name="w1.yaml")
        assert main(["simulate", "--config", cfg1]) == 0
        serial = (tmp_path / "run" / "manifest.json").read_bytes()
        assert main(["simulate", "--config", cfg1, "--workers", "2"]) == 0
        assert (tmp_path / "run" / "manifest.json").read_bytes() == serial


class TestDatasetCommand:
    def test_outputs_exist(self, pipeline_run):
        tmp_path, _ = pipeline_run
        ds_dir = tmp_path / "run" / "dataset"
        assert (ds_dir / "train.cache").exists()
        assert (ds_dir / "val.cache").exists()
        sidecar = json.loads((ds_dir / "dataset.json").read_text())
        assert sidecar["window_len"] == 50
        assert set(sidecar["split_assignment"].values()) == {"train", "val", "test"}


class TestTrainCommand:
    def test_weights_and_log_written(self, pipeline_run):
        tmp_path, _ = pipeline_run
        models = tmp_path / "run" / "models"
        assert (models / "lstm.weights").exists()
        log = (models / "lstm.trainlog.csv").read_text().splitlines()
        assert log[0] == "epoch,train_loss,val_loss"
        assert len(log) == 2  # one epoch

    def test_unknown_observer_is_config_error(self, pipeline_run):
        _, cfg = pipeline_run
        assert main(["train", "--config", cfg, "--observer", "nope"]) == 1

    def test_ekf_is_not_trainable(self, pipeline_run):
        _, cfg = pipeline_run
        assert main(["train", "--config", cfg, "--observer", "ekf"]) == 1


class TestEvaluateCommand:
    def test_report_bundle_written(self, pipeline_run):
        tmp_path, cfg = pipeline_run
        assert main(["evaluate", "--config", cfg]) == 0
        eval_dir = tmp_path / "run" / "eval"
        for name in ("report.csv", "report.txt", "ranking.csv",
                     "accel_distribution.csv", "friction_circle.csv"):
            assert (eval_dir / name).exists(), name
        assert (eval_dir / "traces" / "lstm").is_dir()
        assert (eval_dir / "traces" / "ekf").is_dir()

    def test_missing_weights_names_observer(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        assert main(["simulate", "--config", cfg]) == 0
        assert main(["dataset", "--config", cfg]) == 0
        code = main(["evaluate", "--config", cfg])
        assert code == 3
        err = capsys.readouterr().err
        assert "lstm" in err and "weight" in err

    def test_report_command_rerenders(self, pipeline_run):
        tmp_path, cfg = pipeline_run
        assert main(["evaluate", "--config", cfg]) == 0
        text_before = (tmp_path / "run" / "eval" / "report.txt").read_text()
        (tmp_path / "run" / "eval" / "report.txt").unlink()
        assert main(["report", "--out", str(tmp_path / "run")]) == 0
        assert (tmp_path / "run" / "eval" / "report.txt").read_text() == text_before


class TestGradcheckCommand:
    def test_passes_and_writes_csv(self, tmp_path):
        out = tmp_path / "gc"
        assert main(["gradcheck", "--out", str(out)]) == 0
        header = (out / "gradcheck.csv").read_text().splitlines()[0]
        assert header == "coordinate,analytic,numeric,rel_error"

    def test_corrupt_flag_fails_with_numeric_exit(self, tmp_path):
        assert main(["gradcheck", "--out", str(tmp_path), "--corrupt"]) == 2


class TestExitCodes:
    def test_missing_config_file_is_io_error(self):
        assert main(["simulate", "--config", "/nonexistent/cfg.yaml"]) == 3

    def test_invalid_config_value(self, tmp_path):
        cfg = _write_config(tmp_path, overrides={
            "corpus": [{"kind": "warp_drive", "intensity": 0.5}]})
        assert main(["simulate", "--config", cfg]) == 1

    def test_bad_flag_usage(self, capsys):
        assert main(["simulate"]) == 1  # --config required

    def test_seed_override_changes_output(self, tmp_path):
        cfg = _write_config(tmp_path)
        assert main(["simulate", "--config", cfg]) == 0
        base = (tmp_path / "run" / "manifest.json").read_text()
        assert main(["simulate", "--config", cfg, "--seed", "99"]) == 0
        assert (tmp_path / "run" / "manifest.json").read_text() != base


class TestEnvDefaultRoot:
    def test_out_root_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VOBS_OUT", str(tmp_path / "envroot"))
        doc = json.loads(json.dumps(BASE_CONFIG))
        del doc["observers"]["lstm"]  # keep it cheap: EKF only
        doc["corpus"] = [{"kind": "slalom", "intensity": 0.3, "count": 3,
                          "duration_s": 10}]
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(doc))
        assert main(["simulate", "--config", str(path)]) == 0
        assert (tmp_path / "envroot" / "seed3" / "manifest.json").exists()
