import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rcgan_lab.cli import main, synth_split
from rcgan_lab.data_io import read_dataset_csv, read_grid_csv, read_pgm, write_dataset_csv
from rcgan_lab.gan_training import RCGANModel
from rcgan_lab.scoring_eval import ScoreReport


def run(*argv):
    return main([str(a) for a in argv])


def same_files(a, b, names):
    return all((a / n).read_bytes() == (b / n).read_bytes() for n in names)


# -- theory ---------------------------------------------------------------------


def test_theory_equal_distributions_gives_two(tmp_path):
    assert run("theory", "--q", "uniform(-1, 1)", "--t", "uniform(-1, 1)", "--grid=-1,1,10", "--out", tmp_path) == 0
    assert abs(float((tmp_path / "beta.txt").read_text()) - 2.0) < 1e-9


def test_theory_disjoint_supports_gives_one(tmp_path):
    code = run("theory", "--q", "uniform([-1, -1], [0, 1])", "--t", "uniform([0, -1], [1, 1])",
               "--grid=-1,1,-1,1,20,10", "--out", tmp_path)
    assert code == 0
    assert abs(float((tmp_path / "beta.txt").read_text()) - 1.0) < 1e-9
    np.testing.assert_allclose(read_grid_csv(tmp_path / "p.csv"), read_grid_csv(tmp_path / "q.csv"), atol=1e-15)


def test_theory_default_chops_the_tails(tmp_path):
    assert run("theory", "--out", tmp_path) == 0
    beta = float((tmp_path / "beta.txt").read_text())
    assert 1.0 < beta < 2.0
    q, t, p = (read_grid_csv(tmp_path / f"{n}.csv") for n in "qtp")
    assert q.shape == t.shape == p.shape == (50, 50)
    assert np.all((p > 0) <= (q > 0))
    assert 0 < (p > 0).sum() < p.size
    assert read_pgm(tmp_path / "p.pgm").shape == (50, 50)
    np.testing.assert_allclose(p, np.maximum(0.0, beta * q - t), atol=1e-15)


def test_theory_breakpoint_method_agrees(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("theory", "--out", a) == 0
    assert run("theory", "--method", "breakpoint", "--out", b) == 0
    assert abs(float((a / "beta.txt").read_text()) - float((b / "beta.txt").read_text())) < 1e-9


# -- synth / train / eval -----------------------------------------------------------


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run("synth", "--shape", "loop", "--n", 300, "--n-test", 80, "--anomalies", 20, "--out", out) == 0
    return out


def test_synth_outputs(synth_dir):
    x, y = read_dataset_csv(synth_dir / "train.csv")
    assert x.shape == (300, 2) and np.all(y == 0)
    x, y = read_dataset_csv(synth_dir / "test.csv")
    assert x.shape == (100, 2) and y.sum() == 20
    assert np.all(np.abs(x[y == 1]) <= 3.0)
    assert np.all(np.abs(np.linalg.norm(x[y == 1], axis=1) - 1.0) > 0.5)


def test_synth_split_deterministic():
    a = synth_split("arc", 50, 10, 10, 3.0, 0.5, seed=4)
    b = synth_split("arc", 50, 10, 10, 3.0, 0.5, seed=4)
    assert all(u.tobytes() == v.tobytes() for u, v in zip(a, b))


def test_train_zero_epochs_writes_init_checkpoint(tmp_path, synth_dir):
    code = run("train", "--data", synth_dir / "train.csv", "--epochs", 0, "--hidden", "8",
               "--grid=-2,2,-1,1,12,7", "--out", tmp_path)
    assert code == 0
    init, final = RCGANModel.load(tmp_path / "init.npz"), RCGANModel.load(tmp_path / "model.npz")
    for n in init.nets():
        for a, b in zip(init.nets()[n].params(), final.nets()[n].params()):
            assert a.tobytes() == b.tobytes()
    for which in ("dxz", "dxx"):
        assert read_grid_csv(tmp_path / f"heatmap_{which}.csv").shape == (7, 12)
        assert read_pgm(tmp_path / f"heatmap_{which}.pgm").shape == (7, 12)


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("trained")
    code = run("train", "--data", synth_dir / "train.csv", "--epochs", 2, "--hidden", "16",
               "--batch-size", 64, "--out", out)
    assert code == 0
    return out


def test_train_outputs(trained_dir):
    for name in ("init.npz", "model.npz", "losses.csv", "config.txt", "heatmap_dxz.csv", "heatmap_dxx.pgm"):
        assert (trained_dir / name).exists()
    lines = (trained_dir / "losses.csv").read_text().splitlines()
    assert lines[0] == "step,epoch,ano_disc,ano_gen,cycle_disc,cycle_gen"
    assert len(lines) > 2


def test_train_rerun_is_byte_identical(tmp_path, synth_dir, trained_dir):
    code = run("train", "--data", synth_dir / "train.csv", "--epochs", 2, "--hidden", "16",
               "--batch-size", 64, "--out", tmp_path)
    assert code == 0
    assert same_files(trained_dir, tmp_path, ["model.npz", "losses.csv", "heatmap_dxz.csv"])


@pytest.mark.parametrize("kind", ["dxx", "fm"])
def test_eval_with_checkpoint(tmp_path, synth_dir, trained_dir, kind):
    code = run("eval", "--checkpoint", trained_dir / "model.npz", "--data", synth_dir / "test.csv",
               "--score", kind, "--ratio", 0.2, "--out", tmp_path)
    assert code == 0
    rep = ScoreReport.from_csv(tmp_path / "scores.csv")
    assert len(rep) == 100
    header, values = (tmp_path / "metrics.csv").read_text().splitlines()
    row = dict(zip(header.split(","), values.split(",")))
    assert int(row["n_flagged"]) == 20
    assert 0.0 <= float(row["auroc"]) <= 1.0


def test_eval_perfect_scores(tmp_path):
    labels = np.r_[np.zeros(80, dtype=int), np.ones(20, dtype=int)]
    ScoreReport(labels * 0.9 + 0.05, labels).to_csv(tmp_path / "s.csv")
    assert run("eval", "--scores", tmp_path / "s.csv", "--ratio", 0.2, "--out", tmp_path / "o") == 0
    header, values = (tmp_path / "o" / "metrics.csv").read_text().splitlines()
    row = dict(zip(header.split(","), values.split(",")))
    assert float(row["f1"]) == 1.0 and float(row["auroc"]) == 1.0
    assert int(row["n_flagged"]) == 20


def test_eval_ten_row_fixture(tmp_path, capsys):
    ScoreReport([0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05],
                [1, 0, 1, 0, 0, 1, 0, 0, 0, 0]).to_csv(tmp_path / "s.csv")
    assert run("eval", "--scores", tmp_path / "s.csv", "--ratio", 0.3, "--out", tmp_path) == 0
    printed = capsys.readouterr().out
    assert "precision  0.6666666666666666" in printed
    assert "n_flagged  3" in printed


def test_train_from_tabular_schema(tmp_path):
    fixtures = Path(__file__).parent / "fixtures"
    code = run("train", "--data", fixtures / "tabular.csv", "--schema", fixtures / "tabular.schema",
               "--epochs", 1, "--hidden", "8", "--out", tmp_path)
    assert code == 0
    x, y = read_dataset_csv(tmp_path / "test.csv")
    assert x.shape == (40, 7) and 0 < y.sum() < 40
    assert not (tmp_path / "heatmap_dxz.csv").exists()
    assert run("eval", "--checkpoint", tmp_path / "model.npz", "--data", tmp_path / "test.csv",
               "--out", tmp_path / "ev") == 0


# -- config, exit codes -----------------------------------------------------------


def test_config_file_and_flag_override(tmp_path, synth_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# example\nepochs = 0\nhidden = 4\nlr = 0.01\nseed = 5\n")
    assert run("train", "--config", cfg, "--data", synth_dir / "train.csv", "--lr", 0.02,
               "--out", tmp_path / "o") == 0
    echoed = (tmp_path / "o" / "config.txt").read_text().splitlines()
    assert "epochs = 0" in echoed
    assert "lr = 0.02" in echoed
    assert "hidden = 4" in echoed
    assert "seed = 5" in echoed
    assert "batch-size = 128" in echoed


def test_usage_errors_exit_one(tmp_path):
    assert run("train", "--out", tmp_path) == 1
    assert run("eval", "--out", tmp_path) == 1
    assert run("train", "--synth", "loop", "--hidden", "a,b", "--out", tmp_path) == 1
    assert run("train", "--synth", "loop", "--mode", "wgan", "--epochs", 0, "--out", tmp_path) == 1
    assert run("theory", "--q", "spiral", "--out", tmp_path) == 1
    (tmp_path / "bad.cfg").write_text("colour = red\n")
    assert run("theory", "--config", tmp_path / "bad.cfg", "--out", tmp_path) == 1
    with pytest.raises(SystemExit) as info:
        run("theory", "--no-such-flag", "1")
    assert info.value.code == 1
    assert run("theory") == 1  # no --out


def test_dimension_mismatch_exits_one(tmp_path, trained_dir):
    write_dataset_csv(tmp_path / "d.csv", np.zeros((4, 3)), [0, 1, 0, 1])
    assert run("eval", "--checkpoint", trained_dir / "model.npz", "--data", tmp_path / "d.csv",
               "--out", tmp_path) == 1


def test_numeric_failures_exit_two(tmp_path):
    ScoreReport([0.1, 0.2, 0.3], [0, 0, 0]).to_csv(tmp_path / "s.csv")
    assert run("eval", "--scores", tmp_path / "s.csv", "--ratio", 0.5, "--out", tmp_path) == 2
    write_dataset_csv(tmp_path / "nan.csv", np.full((64, 2), np.nan), np.zeros(64, dtype=int))
    assert run("train", "--data", tmp_path / "nan.csv", "--epochs", 1, "--hidden", "4",
               "--out", tmp_path / "t") == 2


def test_io_failures_exit_three(tmp_path):
    assert run("eval", "--scores", tmp_path / "missing.csv", "--out", tmp_path) == 3
    assert run("train", "--data", tmp_path / "missing.csv", "--out", tmp_path) == 3
    (tmp_path / "bad.csv").write_text("x0,x1,label\n1,two,0\n")
    assert run("train", "--data", tmp_path / "bad.csv", "--out", tmp_path) == 3


def test_console_script_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rcgan_lab.cli", "theory", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("beta = ")
