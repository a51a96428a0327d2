from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from advst.config import RunConfig, load_config, load_datasets, parse_config
from advst.errors import ConfigError


def test_comments_blank_lines_and_alias():
    cfg = parse_config("# header\n\nlambda = 10   # trailing\nepochs=3\ncontrastive = off\n")
    assert cfg.train.lam == 10.0 and cfg.train.epochs == 3 and cfg.train.contrastive is False


def test_max_entropy_mode_defaults_epsilon():
    assert parse_config("mode = advst-me").train.epsilon == 10.0
    assert parse_config("mode = advst-me\nepsilon = 2").train.epsilon == 2.0
    assert parse_config("mode = advst").train.epsilon == 0.0


@pytest.mark.parametrize("mode,generator", [("advst", "semantic"), ("advst-me", "semantic"), ("erm", "none"),
                                            ("pixel-ada", "pixel")])
def test_mode_selects_generator(mode, generator):
    assert parse_config(f"mode = {mode}").effective_train.generator == generator


def test_explicit_epsilon_makes_advst_the_max_entropy_variant():
    assert parse_config("mode = advst\nepsilon = 10").effective_train == \
        parse_config("mode = advst-me").effective_train


@pytest.mark.parametrize("text,line", [("foo = 1", 1), ("epochs = 1\n\nepochs = 2", 3), ("x", 1),
                                       ("epochs = two", 1), ("dtype = float16", 1), ("contrastive = maybe", 1)])
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_config(text)


@pytest.mark.parametrize("text", ["epochs = -1", "lam = -3", "source = idx", "test = raw", "targets = spin(1)",
                                  "synth_per_class = 0", "source_limit = -1"])
def test_invariants_enforced_at_parse_time(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_resolved_snapshot_parses_back_identically():
    cfg = parse_config("mode = pixel-ada\nlambda = 3.5\nbatches_per_epoch = 7\ntargets = invert; scale(0.8)\n")
    again = parse_config(cfg.resolved_text())
    assert again.train == cfg.train and again.resolved_text() == cfg.resolved_text()


@given(st.integers(0, 10**6), st.floats(0, 1e6, allow_nan=False), st.booleans())
def test_overrides_round_trip(seed, lam, contrastive):
    cfg = RunConfig().with_overrides(seed=str(seed), lam=lam, contrastive=contrastive)
    assert (cfg.train.seed, cfg.train.lam, cfg.train.contrastive) == (seed, lam, contrastive)
    assert parse_config(cfg.resolved_text()).train == cfg.train


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_targets_are_shifted_copies_of_the_test_set():
    cfg = parse_config("synth_per_class = 2\ntest = synth\ntest_synth_per_class = 1\ntargets = invert; contrast(2)")
    source, evals = load_datasets(cfg)
    assert len(source) == 20 and list(evals) == ["test", "target1", "target2"]
    assert (evals["target1"].images + evals["test"].images == 1).all()
    _, no_test = load_datasets(cfg.with_overrides(test="none"))
    assert list(no_test) == ["target1", "target2"] and len(no_test["target1"]) == 20


@pytest.mark.parametrize("name", ["mnist.cfg", "synth.cfg"])
def test_shipped_configs_parse(name):
    path = Path(__file__).resolve().parents[1] / "configs" / name
    cfg = load_config(path)
    assert cfg.mode == "advst" and cfg.target_specs()
