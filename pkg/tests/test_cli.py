import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from siamcd.cli import SETTINGS, build_parser, main, resolve, UsageError
from siamcd.data import load_dataset, write_dataset, synth_generate
from siamcd.metrics import read_table_csv
from siamcd.rawio import load_scdt

TINY = ["--encoder-filters", "2,4", "--steps", "3", "--batch-size", "2", "--lr", "0.01"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "synth"
    assert main(["generate", "--out", str(root), "--count", "4", "--test-count", "2", "--size", "16", "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def ckpt(dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "m.ckpt"
    assert main(["train", "--data", str(dataset), "--variant", "diff", "--gated", "true", "--out", str(path), *TINY]) == 0
    return path


def test_generate_layout(dataset):
    assert (dataset / "train.txt").read_text().count("\n") == 4
    assert (dataset / "test.txt").read_text().count("\n") == 2
    assert len(load_dataset(dataset)) == 6


def test_train_writes_checkpoint_and_log(ckpt):
    lines = ckpt.with_name("m.ckpt.log.csv").read_text().splitlines()
    assert lines[0] == "step,loss,recall,f1,precision,accuracy" and len(lines) == 4
    assert ckpt.read_bytes().startswith(b"SCDCKPT1\n")
    assert b"fusion=abs-difference" in ckpt.read_bytes()[:400] and b"gated=true" in ckpt.read_bytes()[:400]


def test_train_is_deterministic(dataset, ckpt, tmp_path):
    again = tmp_path / "again.ckpt"
    assert main(["train", "--data", str(dataset), "--variant", "diff", "--gated", "true", "--out", str(again), *TINY]) == 0
    assert again.read_bytes() == ckpt.read_bytes()


def test_oracle_eval_scores_100(ckpt, dataset, tmp_path, capsys):
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(dataset), "--oracle", "--out", str(tmp_path / "o")]) == 0
    (row,) = read_table_csv((tmp_path / "o.csv").read_text())
    assert [row[k] for k in ("Recall", "F1", "Precision", "Accuracy")] == [100.0] * 4


def test_eval_csv_matches_printed_table(ckpt, dataset, tmp_path, capsys):
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(dataset), "--out", str(tmp_path / "e"), "--sweep", "0.9", "0.1", "0.5"]) == 0
    out = capsys.readouterr().out.splitlines()
    header, printed = out[0].split("\t"), out[1].split("\t")
    assert header == ["network", "u", "s", "d", "Recall", "F1", "Precision", "Accuracy"]
    (row,) = read_table_csv((tmp_path / "e.csv").read_text())
    assert row["network"] == printed[0] == "FC-Siam-diff-Att"
    for k in ("Recall", "F1", "Precision", "Accuracy"):
        assert row[k] == float(printed[header.index(k)])
    tiles = (tmp_path / "e.tiles.csv").read_text().splitlines()
    assert len(tiles) == 3
    sweep = [line.split(",") for line in (tmp_path / "e.sweep.csv").read_text().splitlines()[1:]]
    thresholds = [float(t) for t, _ in sweep]
    positives = [int(n) for _, n in sweep]
    assert thresholds == sorted(thresholds) and positives == sorted(positives, reverse=True)


def test_infer_outputs(ckpt, dataset, tmp_path):
    pair = dataset / (dataset / "test.txt").read_text().split()[0]
    args = ["infer", "--ckpt", str(ckpt), "--t1", str(pair / "t1.png"), "--t2", str(pair / "t2.png")]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    with Image.open(tmp_path / "a.png") as im:
        assert im.size == (16, 16)
        assert set(np.unique(np.asarray(im))) <= {0, 255}
    prob = load_scdt(tmp_path / "a.prob.scdt")
    assert prob.shape == (1, 16, 16) and (prob > 0).all() and (prob < 1).all()
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert (tmp_path / "a.prob.scdt").read_bytes() == (tmp_path / "b.prob.scdt").read_bytes()


def test_infer_size_mismatch(ckpt, tmp_path):
    Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(tmp_path / "a.png")
    Image.fromarray(np.zeros((8, 16, 3), np.uint8)).save(tmp_path / "b.png")
    code = main(["infer", "--ckpt", str(ckpt), "--t1", str(tmp_path / "a.png"), "--t2", str(tmp_path / "b.png"), "--out", str(tmp_path / "x")])
    assert code == 2 and not (tmp_path / "x.png").exists()


def test_glimpse_is_pure_and_records_parameters(dataset, tmp_path):
    for name in ("g1", "g2"):
        assert main(["glimpse", "--in", str(dataset), "--out", str(tmp_path / name)]) == 0
    files = sorted(p.relative_to(tmp_path / "g1") for p in (tmp_path / "g1").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "g1" / rel).read_bytes() == (tmp_path / "g2" / rel).read_bytes()
    assert (tmp_path / "g1" / "glimpse.txt").read_text() == "u=0.1\ns=0.5\nd=2.0\n"
    assert (tmp_path / "g1" / "train.txt").read_text() == (dataset / "train.txt").read_text()


def test_glimpse_raw_keeps_float_images(dataset, tmp_path):
    assert main(["glimpse", "--in", str(dataset), "--out", str(tmp_path / "raw"), "--raw", "--s", "0.8"]) == 0
    assert list((tmp_path / "raw").rglob("t1.scdt"))
    assert "s=0.8" in (tmp_path / "raw" / "glimpse.txt").read_text()


def test_missing_label_names_id(tmp_path, capsys):
    bad = tmp_path / "ds" / "scene_07"
    bad.mkdir(parents=True)
    for name in ("t1", "t2"):
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(bad / f"{name}.png")
    assert main(["glimpse", "--in", str(tmp_path / "ds"), "--out", str(tmp_path / "g")]) == 2
    err = capsys.readouterr().err
    assert "scene_07" in err and "label.png" in err
    assert not (tmp_path / "g").exists()


def test_numerical_abort_exit_code(tmp_path):
    pairs = synth_generate(0, 2, 16, 0.1)
    pairs[0].t1[0, 3, 3] = np.nan
    write_dataset(tmp_path / "nan", pairs, raw=True)
    out = tmp_path / "nan.ckpt"
    assert main(["train", "--data", str(tmp_path / "nan"), "--out", str(out), *TINY]) == 3
    assert not out.exists()


def test_usage_errors(dataset, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    assert main(["generate", "--out", str(tmp_path / "x"), "--set", "data.colour=red"]) == 1
    assert main(["generate", "--out", str(tmp_path / "x"), "--set", "data.count=many"]) == 1
    assert not (tmp_path / "x").exists()


def test_data_errors(tmp_path):
    assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(tmp_path)]) == 2
    (tmp_path / "junk.ckpt").write_bytes(b"garbage")
    assert main(["infer", "--ckpt", str(tmp_path / "junk.ckpt"), "--t1", "a", "--t2", "b", "--out", "c"]) == 2


def test_eval_geometry_mismatch(ckpt, tmp_path):
    grey = synth_generate(0, 1, 16, 0.1)[0]
    grey.t1, grey.t2 = grey.t1[:1].copy(), grey.t2[:1].copy()
    write_dataset(tmp_path / "grey", [grey], raw=True)
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(tmp_path / "grey")]) == 2


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\ndata.count = 3\ndata.size=16  # small\ndata.test_count=1\n")
    assert main(["generate", "--out", str(tmp_path / "a"), "--config", str(cfg)]) == 0
    assert len(load_dataset(tmp_path / "a")) == 4
    assert main(["generate", "--out", str(tmp_path / "b"), "--config", str(cfg), "--count", "2", "--set", "data.test_count=2"]) == 0
    assert len(load_dataset(tmp_path / "b")) == 4
    assert (tmp_path / "b" / "train.txt").read_text().count("\n") == 2
    cfg.write_text("model.depth=9\n")
    assert main(["generate", "--out", str(tmp_path / "c"), "--config", str(cfg)]) == 1


def test_resolve_rules():
    merged = resolve({"glimpse.u": "0.3"}, {"glimpse.u": 0.2})
    assert merged["glimpse.u"] == 0.2 and merged["glimpse.s"] == 0.5
    with pytest.raises(UsageError):
        resolve({"glimpse.w": "1"}, {})


def test_documented_defaults():
    assert SETTINGS["glimpse.u"][1] == 0.1 and SETTINGS["glimpse.s"][1] == 0.5 and SETTINGS["glimpse.d"][1] == 2.0
    assert SETTINGS["train.learning_rate"][1] == 1e-3 and SETTINGS["train.optimizer"][1] == "adam"
    assert SETTINGS["train.beta1"][1] == 0.9 and SETTINGS["train.beta2"][1] == 0.999 and SETTINGS["train.adam_eps"][1] == 1e-8


@pytest.mark.parametrize("command", ["generate", "glimpse", "train", "eval", "infer"])
def test_help_lists_every_flag_with_default(command, capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command").choices[command]
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    text = " ".join(capsys.readouterr().out.split())
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        if action.option_strings and not action.required and action.help and action.nargs != 0 and action.dest != "set":
            assert "default:" in action.help or action.default is not None, action.dest
    if command == "glimpse":
        assert "(default: 0.1;" in text and "(default: 0.5;" in text and "(default: 2.0;" in text


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "siamcd", "generate", "--out", str(tmp_path / "x"), "--set", "nope=1"], capture_output=True, text=True)
    assert proc.returncode == 1 and "unknown config key" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "siamcd", "eval"], capture_output=True, text=True)
    assert proc.returncode == 1
