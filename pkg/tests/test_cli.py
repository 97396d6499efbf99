import csv
import subprocess
import sys

import numpy as np
import pytest

from latent_emotion.cli import main
from latent_emotion.data import write_ps_csv

TINY_CFG = """\
epochs = 1
batch_size = 4
seed = 5
backbone.input_pool = 4
backbone.channels = 3, 4
backbone.out_dim = 8
depth_attention.tokens = 2
depth_attention.d_model = 4
depth_attention.heads = 2
attention.tokens = 2
attention.d_model = 4
attention.heads = 2
ps.rate = 50
ps.input_length = 24
ps.stem_multiplier = 1
ps.grouped_blocks = 1
ps.mixed_blocks = 1
ps.grouped_branches = 3:1, 5:2, 7:3, 11:4
ps.mixed_branches = 3:2, 5:3, 7:4, 11:5
ps.feature_dim = 6
"""


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--subjects", "2", "--per-subject", "2", "--seed", "3"]) == 0
    (root / "tiny.cfg").write_text(TINY_CFG)
    return root


def test_synth_default_layout(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "ds")]) == 0
    dirs = [p for p in (tmp_path / "ds").iterdir() if p.is_dir()]
    assert len(dirs) == 72
    assert "seed 42" in capsys.readouterr().out


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "x", "--bogus"])
    assert exc.value.code == 2


def test_console_script_usage_error():
    res = subprocess.run([sys.executable, "-m", "latent_emotion.cli", "eval-loso"], capture_output=True, text=True)
    assert res.returncode == 2
    assert "required" in res.stderr


def test_unknown_config_key_exits_2(tiny_data, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs = 1\nlearning_rate = 3\n")
    code = main(["eval-loso", "--data", str(tiny_data / "data"), "--config", str(bad), "--report", str(tmp_path / "r")])
    assert code == 2
    assert "learning_rate" in capsys.readouterr().err


def test_missing_dataset_exits_1(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 1


def test_denoise_with_clean_reference(tmp_path, capsys):
    rate, n = 100.0, 512
    t = np.arange(n) / rate
    clean = np.stack([np.sin(2 * np.pi * f * t) for f in (0.5, 1.2, 2.0)])
    noisy = clean + np.random.default_rng(0).normal(0, 0.2, clean.shape)
    write_ps_csv(tmp_path / "clean.csv", rate, clean)
    write_ps_csv(tmp_path / "noisy.csv", rate, noisy)
    code = main(["denoise", "--in", str(tmp_path / "noisy.csv"), "--out", str(tmp_path / "dn.csv"),
                 "--clean", str(tmp_path / "clean.csv")])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("delta +") == 3
    with open(tmp_path / "dn.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "eda", "ecg", "ppg"] and len(rows) == n + 1


def test_denoise_bad_wavelet(tmp_path):
    write_ps_csv(tmp_path / "a.csv", 100.0, np.zeros((3, 64)))
    assert main(["denoise", "--in", str(tmp_path / "a.csv"), "--out", str(tmp_path / "b.csv"),
                 "--wavelet", "coif2"]) == 2


def test_train_writes_checkpoint(tiny_data, tmp_path):
    out = tmp_path / "ckpt"
    code = main(["train", "--data", str(tiny_data / "data"), "--config", str(tiny_data / "tiny.cfg"),
                 "--hold-out-subject", "sub00", "--out", str(out)])
    assert code == 0
    assert (out / "params" / "manifest.csv").exists()
    assert "seed = 5" in (out / "config.cfg").read_text()
    assert (out / "loss_log.csv").read_text().splitlines()[0] == "epoch,mean_loss"
    assert main(["train", "--data", str(tiny_data / "data"), "--hold-out-subject", "nobody",
                 "--out", str(out)]) == 2


def test_eval_loso_flags_and_determinism(tiny_data, tmp_path):
    args = ["eval-loso", "--data", str(tiny_data / "data"), "--config", str(tiny_data / "tiny.cfg"),
            "--arms", "colour", "--fusion", "uniform", "--seed", "11"]
    assert main(args + ["--report", str(tmp_path / "a")]) == 0
    assert main(args + ["--report", str(tmp_path / "b")]) == 0
    report = (tmp_path / "a" / "report.txt").read_text()
    assert "arm = colour" in report and "seed = 11" in report and "fusion.frames = uniform" in report
    assert (tmp_path / "a" / "predictions.csv").read_bytes() == (tmp_path / "b" / "predictions.csv").read_bytes()


def test_eval_loso_all_arms(tiny_data, tmp_path):
    assert main(["eval-loso", "--data", str(tiny_data / "data"), "--config", str(tiny_data / "tiny.cfg"),
                 "--arms", "all", "--report", str(tmp_path / "all")]) == 0
    summary = (tmp_path / "all" / "summary.csv").read_text().splitlines()
    assert len(summary) == 9


def test_bad_jobs(tiny_data, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["eval-loso", "--data", str(tiny_data / "data"), "--report", str(tmp_path), "--jobs", "0"])
    assert exc.value.code == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    assert "checks passed" in capsys.readouterr().out
