import subprocess
import sys

import pytest

from layermask.cli import main
from layermask.config import RunConfig


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    RunConfig(epochs=2, attack_epochs=5, select_attack_epochs=3, figures=False,
              out_dir=str(tmp_path / "out")).save(path)
    return path


def test_train_then_attack_checkpoint(config_file, tmp_path, capsys):
    assert main(["train", "--config", str(config_file), "--mode", "vmask", "--seed", "3",
                 "--budget", "0.5", "--out", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "attack_best" in out and (tmp_path / "run" / "metrics.csv").exists()
    saved = RunConfig.load(tmp_path / "run" / "config.json")
    assert (saved.seed, saved.budget, saved.epochs) == (3, 0.5, 2)

    assert main(["attack", "--checkpoint", str(tmp_path / "run" / "checkpoint_p1.npz"),
                 "--labels-per-class", "4", "--epochs", "5", "--out", str(tmp_path / "atk")]) == 0
    assert "best attack accuracy" in capsys.readouterr().out
    assert (tmp_path / "atk" / "attack.csv").exists()


def test_baseline_scratch(config_file, tmp_path, capsys):
    assert main(["baseline-scratch", "--config", str(config_file), "--out", str(tmp_path / "s")]) == 0
    assert "scratch_attack" in capsys.readouterr().out


def test_check_security_exit_codes(tmp_path, capsys):
    path = tmp_path / "wide.json"
    RunConfig(batch_size=64, bottom_hidden=[64, 128],
              dataset={"kind": "blobs", "n_features": 256}).save(path)
    assert main(["check-security", "--config", str(path)]) == 1
    assert "1 reconstructible of 3" in capsys.readouterr().out
    assert main(["check-security", "--config", str(path), "--allow-insecure", "--json"]) == 0
    assert main(["check-security"]) == 0


def test_sweep_budget(config_file, tmp_path, capsys):
    assert main(["sweep-budget", "--config", str(config_file), "--budgets", "0.3,0.9",
                 "--epochs", "1", "--out", str(tmp_path / "sw")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "budget,attack_acc,main_acc,mask_ratio"
    assert [l.split(",")[0] for l in lines[1:]] == ["0.9", "0.3"]
    assert (tmp_path / "sw" / "sweep.csv").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "layermask", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("train", "attack", "baseline-scratch", "check-security", "sweep-budget"):
        assert cmd in out.stdout


def test_bad_arguments_exit_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--mode", "nonsense"])
    assert exc.value.code != 0
