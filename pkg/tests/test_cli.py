import time

import numpy as np
import pytest

from evit_unet import pgm
from evit_unet.cli import main
from evit_unet.config import RunConfig, tiny_config
from evit_unet.complexity import parse_csv_report
from evit_unet.core import container


@pytest.fixture(scope="module")
def run_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.cfg"
    run = RunConfig(model=tiny_config(num_classes=3), epochs=2, dataset_size=16, batch_size=4)
    path.write_text(run.to_text(), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(run_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(run_cfg), "--out", str(out), "--export-eval"]) == 0
    return out


def test_train_outputs(trained, run_cfg):
    for name in ("checkpoint.evtc", "history.csv", "history.png", "config.resolved.cfg", "eval_set/manifest.tsv"):
        assert (trained / name).exists(), name
    assert RunConfig.from_file(trained / "config.resolved.cfg") == RunConfig.from_file(run_cfg)
    lines = (trained / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,eval_mean_dsc,eval_mean_iou" and len(lines) == 3


def test_train_rerun_is_byte_identical(trained, run_cfg, tmp_path):
    assert main(["train", "--config", str(run_cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "history.csv").read_bytes() == (trained / "history.csv").read_bytes()
    assert (tmp_path / "checkpoint.evtc").read_bytes() == (trained / "checkpoint.evtc").read_bytes()


def test_eval_command(trained, tmp_path, capsys):
    out = tmp_path / "metrics.csv"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.evtc"), "--dataset", str(trained / "eval_set"),
                 "--out", str(out)]) == 0
    assert "mean DSC (foreground)" in capsys.readouterr().out
    assert out.read_text().splitlines()[0] == "class,dsc,iou"


def test_eval_empty_dataset_exits_2(trained, tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.evtc"), "--dataset", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "m.csv")])
    assert code == 2 and "empty dataset" in capsys.readouterr().err


def test_predict_command(trained, tmp_path):
    from evit_unet.training.synth import load_dataset

    sample = load_dataset(trained / "eval_set")[0]
    container.save(tmp_path / "img.evt", sample.image)
    out = tmp_path / "pred.evt"
    assert main(["predict", "--checkpoint", str(trained / "checkpoint.evtc"), "--input", str(tmp_path / "img.evt"),
                 "--out", str(out), "--plot", str(tmp_path / "pred.png")]) == 0
    logits = container.load(out)
    mask, maxval = pgm.load_pgm(tmp_path / "pred.pgm")
    assert logits.shape == (3, 32, 32) and maxval == 2
    assert np.array_equal(mask, logits.argmax(axis=0))
    assert (tmp_path / "pred.png").stat().st_size > 0


def test_predict_batch(trained, tmp_path):
    container.save(tmp_path / "imgs.evt", np.zeros((2, 3, 32, 32), np.float32))
    assert main(["predict", "--checkpoint", str(trained / "checkpoint.evtc"), "--input", str(tmp_path / "imgs.evt"),
                 "--out", str(tmp_path / "p.evt")]) == 0
    assert (tmp_path / "p_0.pgm").exists() and (tmp_path / "p_1.pgm").exists()


def test_predict_rejects_wrong_tensor(trained, tmp_path):
    container.save(tmp_path / "bad.evt", np.zeros((4, 4), np.float32))
    assert main(["predict", "--checkpoint", str(trained / "checkpoint.evtc"), "--input", str(tmp_path / "bad.evt"),
                 "--out", str(tmp_path / "p.evt")]) == 3


def test_flops_command(tmp_path, capsys, run_cfg):
    assert main(["flops", "--format", "csv", "--config", str(run_cfg), "--plot", str(tmp_path / "c.png")]) == 0
    report = parse_csv_report(capsys.readouterr().out.encode())
    assert report.rows and (tmp_path / "c.png").exists()
    assert main(["flops", "--input-hw", "448x448"]) == 0
    assert "input shape 1x3x448x448" in capsys.readouterr().out


def test_synth_command(run_cfg, tmp_path, capsys):
    assert main(["synth", "--config", str(run_cfg), "--out", str(tmp_path / "d"), "--split", "all"]) == 0
    assert len((tmp_path / "d" / "manifest.tsv").read_text().splitlines()) == 17


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--scope", "op", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[-1].startswith("op: ") and "\tgelu\tseed=0\tpass" in out


def test_config_error_exit_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs=2\nlearning_rate=0.1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_io_error_exit(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.evtc"), "--dataset", str(tmp_path)]) == 3
    (tmp_path / "junk.evtc").write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(tmp_path / "junk.evtc"), "--dataset", str(tmp_path)]) == 3


def test_usage_error_exit():
    with pytest.raises(SystemExit) as info:
        main(["flops", "--input-hw", "big"])
    assert info.value.code == 2


def test_selftest_negative_control(capsys):
    assert main(["selftest", "--corrupt-backward", "--seeds", "1"]) == 1
    assert "FAIL  gradcheck/op" in capsys.readouterr().out


def test_selftest_passes_quickly_and_deterministically(capsys):
    t0 = time.perf_counter()
    assert main(["selftest"]) == 0
    elapsed = time.perf_counter() - t0
    first = capsys.readouterr().out
    assert elapsed < 300 and first.splitlines()[-1] == "selftest: all groups passed"
    assert main(["selftest", "--seeds", "1"]) == 0
    again = capsys.readouterr().out
    assert main(["selftest", "--seeds", "1"]) == 0
    assert capsys.readouterr().out == again
