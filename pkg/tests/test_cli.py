import json
import shutil
import subprocess

import numpy as np
import pytest
import yaml

from mmsplat import io
from mmsplat.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main

TINY = {"iterations": 20, "n_init": 40, "densify_start": 5, "densify_stop": 15, "log_every": 10,
        "densify": {"interval": 5}}


@pytest.fixture
def workspace(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "data"), "--seed", "4", "--width", "24",
                 "--height", "20", "--n-objects", "2"]) == EXIT_OK
    (tmp_path / "tiny.yaml").write_text(yaml.safe_dump(TINY))
    return tmp_path


def test_generate_writes_dataset(workspace):
    ds = io.load_dataset(workspace / "data")
    assert (ds.width, ds.height) == (24, 20)
    assert (workspace / "data" / "rgb.png").is_file()
    assert ds.manifest["spec"]["seed"] == 4


def test_train_eval_render(workspace, capsys):
    run_dir = workspace / "run"
    assert main(["train", "--data", str(workspace / "data"), "--out", str(run_dir),
                 "--config", str(workspace / "tiny.yaml"), "--method", "Decomp."]) == EXIT_OK
    out = capsys.readouterr().out
    assert "iter     0" in out and "gaussians" in out
    saved = yaml.safe_load((run_dir / "config.yaml").read_text())
    assert saved["iterations"] == 20 and saved["densify"]["decomposition"] is True

    assert main(["eval", "--checkpoint", str(run_dir / "checkpoint.npz"),
                 "--data", str(workspace / "data"), "--out", str(workspace / "eval.json")]) == EXIT_OK
    report = json.loads((workspace / "eval.json").read_text())
    trained = json.loads((run_dir / "report.json").read_text())
    assert report["metrics"] == trained["metrics"]

    assert main(["render", "--checkpoint", str(run_dir / "checkpoint.npz"),
                 "--out", str(workspace / "renders"), "--modality", "thermal"]) == EXIT_OK
    img = io.read_raster(workspace / "renders" / "thermal")
    assert img.data.shape == (20, 24, 1)
    assert (workspace / "renders" / "thermal.png").is_file()
    assert main(["render", "--checkpoint", str(run_dir / "checkpoint.npz"),
                 "--out", str(workspace / "renders"), "--modality", "depth"]) == EXIT_DATA


def test_resume_via_cli(workspace):
    data, cfg = str(workspace / "data"), str(workspace / "tiny.yaml")
    assert main(["train", "--data", data, "--out", str(workspace / "a"), "--config", cfg,
                 "--quiet"]) == EXIT_OK
    assert main(["train", "--data", data, "--out", str(workspace / "b"), "--config", cfg,
                 "--quiet", "--stop-after", "8"]) == EXIT_OK
    assert main(["train", "--data", data, "--out", str(workspace / "c"), "--config", cfg, "--quiet",
                 "--resume", str(workspace / "b" / "checkpoint.npz")]) == EXIT_OK
    a = json.loads((workspace / "a" / "report.json").read_text())
    c = json.loads((workspace / "c" / "report.json").read_text())
    a.pop("timing"), c.pop("timing")
    assert a == c


def test_iterations_override_clips_window(workspace):
    assert main(["train", "--data", str(workspace / "data"), "--out", str(workspace / "r"),
                 "--iterations", "3", "--quiet"]) == EXIT_CONFIG
    assert main(["train", "--data", str(workspace / "data"), "--out", str(workspace / "r"),
                 "--config", str(workspace / "tiny.yaml"), "--iterations", "3",
                 "--quiet"]) == EXIT_OK
    saved = yaml.safe_load((workspace / "r" / "config.yaml").read_text())
    assert saved["densify_stop"] == 3


def test_ablate_rows(workspace):
    out = workspace / "abl"
    assert main(["ablate", "--data", str(workspace / "data"), "--out", str(out),
                 "--config", str(workspace / "tiny.yaml"), "--rows", "MM-J", "Decomp."]) == EXIT_OK
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["name"] for r in rows] == ["MM-J", "Decomp."]
    assert (out / "MM_J" / "checkpoint.npz").is_file()
    assert main(["ablate", "--data", str(workspace / "data"), "--out", str(out),
                 "--rows", "Full"]) == EXIT_CONFIG


def test_calibrate(workspace, capsys):
    assert main(["calibrate-thresholds", "--data", str(workspace / "data"), "--warmup", "5",
                 "--config", str(workspace / "tiny.yaml")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert len(out["grad_signal"]) == len(out["quantiles"])


def test_config_errors_exit_2(workspace):
    (workspace / "bad.yaml").write_text("iterations: 0\n")
    assert main(["train", "--data", str(workspace / "data"), "--out", str(workspace / "x"),
                 "--config", str(workspace / "bad.yaml")]) == EXIT_CONFIG
    assert main(["train", "--data", str(workspace / "data"), "--out", str(workspace / "x"),
                 "--method", "nope"]) == EXIT_CONFIG
    assert main(["generate", "--out", str(workspace / "g"), "--width", "0"]) == EXIT_CONFIG


def test_data_errors_exit_3(workspace):
    assert main(["train", "--data", str(workspace / "missing"), "--out", str(workspace / "x"),
                 "--config", str(workspace / "tiny.yaml")]) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(workspace / "none.npz"),
                 "--data", str(workspace / "data")]) == EXIT_DATA


@pytest.mark.skipif(shutil.which("mmsplat") is None, reason="console script not installed")
def test_console_script_exit_codes(tmp_path):
    ok = subprocess.run(["mmsplat", "--threads", "1", "generate", "--out", str(tmp_path / "d"),
                         "--width", "8", "--height", "8"], capture_output=True, text=True)
    assert ok.returncode == 0, ok.stderr
    bad = subprocess.run(["mmsplat", "eval", "--checkpoint", str(tmp_path / "x.npz"),
                          "--data", str(tmp_path / "d")], capture_output=True, text=True)
    assert bad.returncode == 3 and "data error" in bad.stderr
