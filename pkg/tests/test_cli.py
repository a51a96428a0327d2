import csv

import numpy as np
import pytest

from advst import autodiff as ad
from advst import gradsuite
from advst.classifier import init_model, save_checkpoint
from advst.cli import ABLATION, main, parse_data_arg, parse_sweep, UsageError

SMALL = """# smoke configuration
synth_per_class = 2
test = synth
test_synth_per_class = 2
targets = invert
epochs = 1
batch_size = 8
batches_per_epoch = 2
ascent_steps = 1
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "random.ckpt"
    save_checkpoint(path, init_model(10, np.random.default_rng(0)))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_erm_writes_one_row_and_snapshots(cfg_path, tmp_path, capsys):
    out = tmp_path / "erm"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "4"]) == 0
    rows = read_csv(out / "log.csv")
    assert len(rows) == 2 and rows[0][-1] == "seconds"
    assert (out / "config.txt").read_text() == SMALL
    assert "seed = 4" in (out / "config.resolved").read_text()
    assert "test" in capsys.readouterr().out


def test_train_is_byte_reproducible(cfg_path, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / name)]) == 0
    for artifact in ("model.ckpt", "log.csv"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


def test_resolved_snapshot_reproduces_the_run(cfg_path, tmp_path):
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "a"), "--seed", "9"]) == 0
    assert main(["train", "--config", str(tmp_path / "a" / "config.resolved"), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


def test_sweep_runs_each_value(cfg_path, tmp_path):
    out = tmp_path / "sweep"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--sweep", "lambda=1,10"]) == 0
    rows = read_csv(out / "sweep.csv")
    assert [r[0] for r in rows] == ["lambda", "1", "10"]
    assert "lam = 10.0" in (out / "lambda=10" / "config.resolved").read_text()


def test_config_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs = 1\nwhatever = 2\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_divergence_dumps_state(cfg_path, tmp_path, monkeypatch):
    from advst import trainer

    original = trainer.minimization_loss

    def poisoned(*args, **kwargs):
        out = original(*args, **kwargs)
        out.total = out.total * float("nan")
        return out

    monkeypatch.setattr(trainer, "minimization_loss", poisoned)
    out = tmp_path / "div"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 3
    assert (out / "divergence.ckpt").exists()
    assert "non-finite" in (out / "divergence.txt").read_text()


def test_eval_writes_domain_table(checkpoint, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", str(checkpoint), "--data", "a=synth:3", "--shift", "b=a:invert", "--out", str(out)]) == 0
    rows = read_csv(out / "eval.csv")
    assert rows[0] == ["domain", "accuracy", "n"]
    assert [r[0] for r in rows[1:]] == ["a", "b"] and rows[1][2] == "30"


def test_random_model_is_near_chance(checkpoint, tmp_path, capsys):
    assert main(["eval", str(checkpoint), "--data", "s=synth:20:3", "--out", str(tmp_path)]) == 0
    acc = float(read_csv(tmp_path / "eval.csv")[1][1])
    sigma = np.sqrt(0.1 * 0.9 / 200)
    assert abs(acc - 0.1) <= 3 * sigma + 0.1


def test_eval_empty_dataset_exits_nonzero(checkpoint):
    assert main(["eval", str(checkpoint), "--data", "a=synth:2", "--limit", "0"]) == 2


def test_eval_checkpoint_errors(tmp_path):
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", str(junk), "--data", "a=synth:1"]) == 2


def test_export_shape(checkpoint, tmp_path):
    out = tmp_path / "ex"
    assert main(["export", str(checkpoint), "--data", "a=synth:10", "--data", "b=synth:10:1", "--out", str(out),
                 "--preview", "grid.pgm"]) == 0
    rows = read_csv(out / "embeddings.csv")
    assert len(rows) == 201 and all(len(r) == 1026 for r in rows)
    assert rows[0][:3] == ["domain", "label", "v_1"] and rows[0][-1] == "v_1024"
    assert (out / "grid.pgm").read_bytes().startswith(b"P5")


def test_export_identical_inputs_give_identical_rows(checkpoint, tmp_path):
    assert main(["export", str(checkpoint), "--data", "a=synth:1", "--data", "b=synth:1", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "embeddings.csv")[1:]
    assert [r[1:] for r in rows[:10]] == [r[1:] for r in rows[10:]]


def test_export_with_generated_domain(checkpoint, cfg_path, tmp_path):
    assert main(["export", str(checkpoint), "--data", "a=synth:1", "--config", str(cfg_path), "--generate", "a",
                 "--preview", "gen.ppm", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "embeddings.csv")[1:]
    assert [r[0] for r in rows].count("generated") == 10


def test_gradcheck_passes_and_lists_every_primitive_once(capsys):
    assert main(["gradcheck", "--suite", "autodiff"]) == 0
    report = capsys.readouterr().out
    names = [line.split()[1] for line in report.splitlines() if line.startswith("autodiff ")]
    assert sorted(names) == sorted(ad.PRIMITIVES)


def test_gradcheck_fails_on_flipped_backward(monkeypatch, capsys):
    prim = ad.PRIMITIVES["sin"]
    original = prim.backward
    monkeypatch.setattr(prim, "backward", lambda c, g, n: tuple(None if x is None else -x for x in original(c, g, n)))
    assert main(["gradcheck", "--suite", "autodiff"]) == 1
    assert capsys.readouterr().err.strip() == "offenders: autodiff/sin"


def test_primitive_without_a_case_is_a_failure(monkeypatch):
    monkeypatch.setitem(ad.PRIMITIVES, "mystery", ad.PRIMITIVES["neg"])
    results = {r.name: r for r in gradsuite.primitive_suite()}
    assert not results["mystery"].passed


def test_ablate_emits_five_rows_in_order(tmp_path):
    cfg = tmp_path / "ab.cfg"
    cfg.write_text(SMALL.replace("epochs = 1", "epochs = 1\nbatches_per_epoch = 1").replace("batches_per_epoch = 2\n", ""))
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "ab"), "--repeats", "2"]) == 0
    rows = read_csv(tmp_path / "ab" / "ablate.csv")
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
    assert [tuple(int(v) for v in r[1:4]) for r in rows[1:]] == [tuple(map(int, a[1:])) for a in ABLATION]
    assert len(read_csv(tmp_path / "ab" / "ablate_runs.csv")) == 1 + 5 * 2


@pytest.mark.parametrize("text", ["lambda", "=1,2", "lambda="])
def test_bad_sweep(text):
    with pytest.raises(UsageError):
        parse_sweep(text)


@pytest.mark.parametrize("text", ["a", "a=idx:one", "a=zip:x", "=synth:2", "a=synth:1:2:3"])
def test_bad_data_arguments(text):
    with pytest.raises(UsageError):
        parse_data_arg(text)
