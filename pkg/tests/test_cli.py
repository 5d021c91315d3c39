import numpy as np
import pytest

from finclass import data as fd
from finclass.cli import dispatch
from finclass.config import load_config, parse_config_text
from finclass.errors import InvalidConfigError


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    """Two-class synthetic tree plus a one-epoch checkpoint trained on it."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "d"
    assert dispatch(["synth", "--classes", "2", "--per-class", "4", "--seed", "3", "--out", str(data)]) == 0
    cfg = root / "run.cfg"
    cfg.write_text("epochs = 1\nbatch_size = 4\ntest_fraction = 0.25\n")
    ckpt = root / "m.fnet"
    rc = dispatch(["--threads", "1", "train", "--data", str(data), "--config", str(cfg), "--checkpoint", str(ckpt)])
    assert rc == 0
    return root, data, cfg, ckpt


def test_synth_writes_images_and_manifest(tmp_path, capsys):
    out = tmp_path / "d"
    assert dispatch(["synth", "--classes", "3", "--per-class", "10", "--seed", "1", "--out", str(out)]) == 0
    assert len(list(out.glob("*/*.png"))) == 30
    assert len((out / "manifest.txt").read_text().splitlines()) == 30
    assert "wrote 30 images" in capsys.readouterr().out


def test_unknown_subcommand_is_usage_error(capsys):
    assert dispatch(["frobnicate"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert dispatch(["synth", "--classes", "2", "--per-class", "1", "--out", "x", "--bogus"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0


def test_missing_checkpoint_names_path(tmp_path, capsys):
    rc = dispatch(["eval", "--data", str(tmp_path), "--checkpoint", "missing.fnet"])
    assert rc == 1
    assert "missing.fnet" in capsys.readouterr().err


def test_missing_data_root(tiny, tmp_path, capsys):
    _, _, _, ckpt = tiny
    rc = dispatch(["eval", "--data", str(tmp_path / "nope"), "--checkpoint", str(ckpt)])
    assert rc == 1
    assert "nope" in capsys.readouterr().err


def test_train_requires_checkpoint(tiny, capsys):
    _, data, cfg, _ = tiny
    assert dispatch(["train", "--data", str(data), "--config", str(cfg)]) == 2


def test_train_outputs(tiny):
    root, _, _, ckpt = tiny
    assert ckpt.read_bytes()[:4] == b"FNET"
    lines = ckpt.with_suffix(".history.csv").read_text().splitlines()
    assert lines[0] == "epoch,step,loss,train_accuracy"
    assert len(lines) == 3  # 6 training samples, batch 4 -> 2 steps


def test_eval_prints_confusion(tiny, capsys):
    _, data, cfg, ckpt = tiny
    assert dispatch(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "evaluated 8 samples" in out
    assert "confusion" in out.lower() and "precision" in out.lower()
    assert dispatch(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--config", str(cfg),
                     "--subset", "test"]) == 0
    assert "evaluated 2 samples" in capsys.readouterr().out


def test_eval_rejects_class_mismatch(tiny, tmp_path, capsys):
    _, _, _, ckpt = tiny
    other = tmp_path / "o"
    fd.write_synthetic(other, 3, 1, seed=0)
    assert dispatch(["eval", "--data", str(other), "--checkpoint", str(ckpt)]) == 1
    assert "differ" in capsys.readouterr().err


def test_predict(tiny, capsys):
    _, data, _, ckpt = tiny
    img = sorted(data.glob("*/*.png"))[0]
    assert dispatch(["predict", "--image", str(img), "--checkpoint", str(ckpt)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] in ("ellipse", "triangle")
    probs = [float(l.split(":")[1]) for l in lines[1:]]
    assert len(probs) == 2 and abs(sum(probs) - 1) < 1e-5


def test_bench_reports_finite(tiny, capsys):
    _, _, _, ckpt = tiny
    assert dispatch(["bench", "--checkpoint", str(ckpt), "--iters", "2"]) == 0
    line = capsys.readouterr().out.splitlines()[0]
    assert np.isfinite(float(line.split(":")[1].split()[0]))
    assert dispatch(["bench", "--checkpoint", str(ckpt), "--iters", "0"]) == 2


def test_preprocess_dumps_are_bit_identical(tiny, tmp_path):
    _, data, _, _ = tiny
    img = sorted(data.glob("*/*.png"))[0]
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(["preprocess", str(img), "--out-dir", str(a)]) == 0
    assert dispatch(["preprocess", str(img), "--out-dir", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert len(names) == 9 and names[0] == "01_meanshift.ppm"
    assert all(n.endswith(".pgm") for n in names[1:])
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_compare_activations_rows(tiny, tmp_path, capsys):
    _, data, cfg, _ = tiny
    out = tmp_path / "cmp.csv"
    assert dispatch(["compare-activations", "--data", str(data), "--config", str(cfg), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "activation,accuracy"
    assert [r.split(",")[0] for r in rows[1:]] == ["relu", "tanh", "sigmoid", "softmax"]
    assert all(0 <= float(r.split(",")[1]) <= 100 for r in rows[1:])


def test_threads_env_default(monkeypatch):
    from finclass.cli import build_parser

    monkeypatch.setenv("FINCLASS_THREADS", "3")
    assert build_parser().parse_args(["synth", "--classes", "2", "--per-class", "1", "--out", "x"]).threads == 3
    args = build_parser().parse_args(["--threads", "1", "synth", "--classes", "2", "--per-class", "1", "--out", "x"])
    assert args.threads == 1


# -- config ------------------------------------------------------------------


def test_config_parse_comments():
    assert parse_config_text("# top\nepochs = 3  # trailing\n\nlr=0.01\n") == {"epochs": "3", "lr": "0.01"}
    with pytest.raises(InvalidConfigError):
        parse_config_text("epochs 3")


def test_config_flags_override_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("epochs = 3\nseed = 5\ndist_metric = L2\nkeep_prob = 0.5\n")
    cfg = load_config(p, {"epochs": 7, "seed": None})
    assert cfg.train.epochs == 7
    assert cfg.train.seed == 5
    assert cfg.preprocess.dist_metric == "L2"
    assert cfg.keep_prob == 0.5


@pytest.mark.parametrize("text", ["nonsense_key = 1", "epochs = many", "dist_metric = L3", "shuffle = maybe"])
def test_config_rejects_bad(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text + "\n")
    with pytest.raises(InvalidConfigError):
        load_config(p)


def test_bad_config_exits_one(tiny, tmp_path, capsys):
    _, data, _, _ = tiny
    p = tmp_path / "c.cfg"
    p.write_text("wat = 1\n")
    rc = dispatch(["train", "--data", str(data), "--config", str(p), "--checkpoint", str(tmp_path / "m")])
    assert rc == 1
    assert "wat" in capsys.readouterr().err
