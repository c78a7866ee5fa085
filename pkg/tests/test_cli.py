import json

import numpy as np
import pytest

from entropy_sc.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from entropy_sc.data import read_pgm, read_scd1
from entropy_sc.optim import read_checkpoint, read_trace


@pytest.fixture
def bars_dir(tmp_path):
    out = tmp_path / "bars"
    assert main(["generate-bars", "--out", str(out), "--n", "120", "--seed", "4"]) == EXIT_OK
    return out


def test_generate_bars_defaults(tmp_path):
    assert main(["generate-bars", "--out", str(tmp_path / "a")]) == EXIT_OK
    data = read_scd1(tmp_path / "a" / "bars.scd")
    assert (data.n, data.d) == (1000, 25)
    gt = json.loads((tmp_path / "a" / "ground_truth.json").read_text())
    assert np.asarray(gt["w"]).shape == (25, 10)
    assert read_pgm(tmp_path / "a" / "ground_truth_fields.pgm").shape == (19, 25)


def test_generate_bars_options_and_determinism(tmp_path):
    for name in ("a", "b"):
        assert main(["generate-bars", "--grid", "4", "--n", "100", "--seed", "9", "--out", str(tmp_path / name)]) == 0
    data = read_scd1(tmp_path / "a" / "bars.scd")
    assert (data.n, data.d) == (100, 16)
    assert (tmp_path / "a" / "bars.scd").read_bytes() == (tmp_path / "b" / "bars.scd").read_bytes()


def test_generate_bars_bad_spec(tmp_path, capsys):
    assert main(["generate-bars", "--grid", "1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_make_patches(tmp_path):
    img = (np.arange(400).reshape(20, 20) % 17).astype(np.uint8)
    from entropy_sc.data import write_pgm
    write_pgm(tmp_path / "img.pgm", img)
    out = tmp_path / "p.scd"
    assert main(["make-patches", "--images", str(tmp_path / "img.pgm"), "--patch-side", "4", "--n", "50",
                 "--whitening", "none", "--out", str(out)]) == EXIT_OK
    data = read_scd1(out)
    assert (data.n, data.d) == (50, 16)
    np.testing.assert_allclose(data.x.mean(axis=1), 0.0, atol=1e-5)
    out2 = tmp_path / "dl.scd"
    assert main(["make-patches", "--n", "300", "--n-images", "1", "--image-size", "32", "--out", str(out2)]) == 0
    assert read_scd1(out2).d == 64


def test_train_epochs_zero_and_report(bars_dir, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(bars_dir / "bars.scd"), "--out", str(run), "--epochs", "0"]) == EXIT_OK
    ck = read_checkpoint(run / "checkpoint.json")
    from entropy_sc.optim.trainer import initial_preimage
    np.testing.assert_array_equal(ck["preimage"], initial_preimage(25, 10, 0))
    assert len(read_trace(run / "trace.csv")) == 1
    capsys.readouterr()
    assert main(["report", "--run", str(run)]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("epoch,total_elbo,")
    assert len(out[1].split(",")) == len(out[0].split(","))
    for name in ("trace.png", "fields.png", "lambdas.png"):
        assert (run / "figures" / name).read_bytes()[:4] == b"\x89PNG"


def test_train_config_file_and_overrides(bars_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 5, "batch": 60, "e_step_iters": 5, "eval_iters": 5,
                               "data": str(bars_dir / "bars.scd"), "out": str(tmp_path / "r")}))
    assert main(["train", "--config", str(cfg), "--epochs", "1", "--snapshot-every", "1", "--figures"]) == EXIT_OK
    trace = read_trace(tmp_path / "r" / "trace.csv")
    assert [r.epoch for r in trace] == [0, 1]
    assert (tmp_path / "r" / "fields_epoch001.pgm").exists()
    assert (tmp_path / "r" / "figures" / "trace.png").exists()
    saved = json.loads((tmp_path / "r" / "run_config.json").read_text())
    assert saved["epochs"] == 1 and saved["batch"] == 60


def test_train_config_errors(bars_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epoch": 3, "lr": 0.1}))
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "'epoch'" in err and "'lr'" in err
    # every problem is reported, not only the first
    assert main(["train", "--posterior", "full", "--amortized", "--rank", "0"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "--data is required" in err and "--out is required" in err and "rank" in err and "amortized" in err
    assert main(["train", "--data", str(bars_dir / "bars.scd"), "--out", str(tmp_path / "x"),
                 "--anneal", "cosine"]) == EXIT_CONFIG
    assert main(["train", "--data", str(tmp_path / "missing.scd"), "--out", str(tmp_path / "x")]) == EXIT_IO


def test_train_amortized_and_eval(bars_dir, tmp_path, capsys):
    run = tmp_path / "amz"
    assert main(["train", "--data", str(bars_dir / "bars.scd"), "--out", str(run), "--optimizer", "adam",
                 "--epochs", "2", "--batch", "40", "--encoder-lr", "0.01"]) == EXIT_OK
    ck = read_checkpoint(run / "checkpoint.json")
    assert "encoder_v1" in ck and ck["config"].amortized
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "checkpoint.json"), "--data", str(bars_dir / "bars.scd"),
                 "--max-iters", "20", "--out", str(tmp_path / "e.json")]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep == json.loads((tmp_path / "e.json").read_text())
    assert rep["breakdown"]["total"] > ck["final_elbo"]  # refining the posteriors closes part of the gap


def test_eval_checkpoint_self_consistency(bars_dir, tmp_path, capsys):
    run = tmp_path / "full"
    assert main(["train", "--data", str(bars_dir / "bars.scd"), "--out", str(run), "--posterior", "full",
                 "--dictionary-optimizer", "joint", "--batch", "120", "--epochs", "2", "--e-step-iters", "200",
                 "--eval-iters", "0"]) == EXIT_OK
    final = read_trace(run / "trace.csv")[-1].total_elbo
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "checkpoint.json"), "--data", str(bars_dir / "bars.scd"),
                 "--max-iters", "200"]) == EXIT_OK
    trained = json.loads(capsys.readouterr().out)["breakdown"]["total"]
    assert abs(trained - final) < 0.1
    rng = np.random.default_rng(0)
    np.savetxt(tmp_path / "w.csv", rng.normal(size=(25, 10)), delimiter=",")
    assert main(["eval", "--dictionary", str(tmp_path / "w.csv"), "--data", str(bars_dir / "bars.scd"),
                 "--posterior", "full", "--max-iters", "200"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["breakdown"]["total"] < trained


def test_eval_argument_errors(bars_dir, tmp_path):
    data = str(bars_dir / "bars.scd")
    assert main(["eval", "--data", data]) == EXIT_CONFIG
    np.savetxt(tmp_path / "w.csv", np.ones((16, 3)), delimiter=",")
    assert main(["eval", "--dictionary", str(tmp_path / "w.csv"), "--data", data]) == EXIT_CONFIG
    (tmp_path / "w.json").write_text('{"other": 1}')
    assert main(["eval", "--dictionary", str(tmp_path / "w.json"), "--data", data]) == EXIT_CONFIG


def test_verify_command(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SC_THREADS", "1")
    assert main(["verify", "--suite", "theorems", "--trials", "20", "--out", str(tmp_path / "v.json")]) == EXIT_OK
    rep = json.loads((tmp_path / "v.json").read_text())
    assert rep["passed"] and rep["suites"][0]["n_checks"] == 100
    assert main(["verify", "--suite", "nope"]) == EXIT_CONFIG


def test_threads_flag(tmp_path):
    assert main(["--threads", "0", "verify", "--suite", "math", "--trials", "1"]) == EXIT_CONFIG
    assert main(["--threads", "2", "verify", "--suite", "math", "--trials", "1"]) == EXIT_OK


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "generate-bars" in capsys.readouterr().out
