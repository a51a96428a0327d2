"""Flat ``key = value`` run configuration files.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
Keys are the :class:`~advst.trainer.TrainConfig` fields (``lambda`` is
accepted for ``lam``) plus the run-level keys in :data:`RUN_KEYS`. Unknown
or repeated keys are errors that name the offending line.

Example::

    mode = advst
    source = idx
    source_images = data/mnist/train-images-idx3-ubyte.gz
    source_labels = data/mnist/train-labels-idx1-ubyte.gz
    source_limit = 1000
    targets = invert+translate(0.15,0); colorize(0.6,0.1)
    epochs = 10
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .data import load_idx, load_raw, make_target_domain, parse_shift, synth_digits
from .errors import ConfigError, ContractViolation
from .trainer import TrainConfig, erm_config

MODES = ("advst", "advst-me", "erm", "pixel-ada")
SOURCES = ("synth", "idx", "raw")
TESTS = ("none", "synth", "idx", "raw")
DTYPES = ("float32", "float64")
ALIASES = {"lambda": "lam"}
ME_EPSILON = 10.0


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_optional_int(text):
    return None if text.lower() in ("none", "auto", "") else _parse_int(text)


def _parse_float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _parse_optional_float(text):
    return None if text.lower() in ("none", "") else _parse_float(text)


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _train_parsers():
    parsers = {}
    for f in fields(TrainConfig):
        if f.name == "batches_per_epoch":
            parsers[f.name] = _parse_optional_int
        elif isinstance(f.default, bool):
            parsers[f.name] = _parse_bool
        elif isinstance(f.default, int):
            parsers[f.name] = _parse_int
        elif isinstance(f.default, float):
            parsers[f.name] = _parse_float
        else:
            parsers[f.name] = str
    return parsers


TRAIN_KEYS = _train_parsers()
# epsilon is optional at the run level so mode=advst-me can supply its own default
TRAIN_KEYS["epsilon"] = _parse_optional_float

RUN_KEYS = {
    "mode": _choice(MODES),
    "source": _choice(SOURCES),
    "source_images": str,
    "source_labels": str,
    "source_raw": str,
    "source_limit": _parse_optional_int,
    "synth_per_class": _parse_int,
    "synth_seed": _parse_int,
    "test": _choice(TESTS),
    "test_images": str,
    "test_labels": str,
    "test_raw": str,
    "test_limit": _parse_optional_int,
    "test_synth_per_class": _parse_int,
    "test_synth_seed": _parse_int,
    "targets": str,
    "out": str,
    "dtype": _choice(DTYPES),
}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "advst"
    source: str = "synth"
    source_images: str = ""
    source_labels: str = ""
    source_raw: str = ""
    source_limit: int | None = None
    synth_per_class: int = 100
    synth_seed: int = 0
    test: str = "none"
    test_images: str = ""
    test_labels: str = ""
    test_raw: str = ""
    test_limit: int | None = None
    test_synth_per_class: int = 100
    test_synth_seed: int = 1
    targets: str = ""
    out: str = "runs/latest"
    dtype: str = "float32"
    text: str = ""

    @property
    def effective_train(self):
        """TrainConfig after applying the mode."""
        if self.mode == "erm":
            return erm_config(self.train)
        if self.mode == "pixel-ada":
            return self.train.replace(generator="pixel")
        return self.train.replace(generator="semantic")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def target_specs(self):
        return [parse_shift(s) for s in self.targets.split(";") if s.strip()]

    def with_overrides(self, **changes):
        """Apply overrides given as strings (parsed like file values) or typed values."""
        values = {}
        for key, value in changes.items():
            key = ALIASES.get(key, key)
            values[key] = _convert(key, value, None) if isinstance(value, str) else value
        merged = _apply(self, values)
        merged.text = self.text
        return merged

    def resolved_text(self):
        """Every key with its effective value; parses back to an equal config."""
        lines = [f"mode = {self.mode}"]
        for f in fields(TrainConfig):
            lines.append(f"{f.name} = {_format_value(getattr(self.train, f.name))}")
        for key in RUN_KEYS:
            if key != "mode":
                lines.append(f"{key} = {_format_value(getattr(self, key))}")
        return "\n".join(lines) + "\n"


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key, raw, lineno):
    where = f"line {lineno}: " if lineno is not None else ""
    parser = TRAIN_KEYS.get(key) or RUN_KEYS.get(key)
    if parser is None:
        raise ConfigError(f"{where}unknown key {key!r}")
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}{key}: {exc}") from None


def _apply(base, values):
    train_changes = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    run_changes = {k: v for k, v in values.items() if k in RUN_KEYS}
    mode = run_changes.get("mode", base.mode)
    if train_changes.get("epsilon", 0.0) is None:
        train_changes["epsilon"] = ME_EPSILON if mode == "advst-me" else 0.0
    train = base.train.replace(**train_changes)
    kwargs = {f.name: getattr(base, f.name) for f in fields(RunConfig)}
    kwargs.update(run_changes, train=train)
    cfg = RunConfig(**kwargs)
    _validate_run(cfg)
    return cfg


def _validate_run(cfg):
    for key in ("source_limit", "test_limit"):
        value = getattr(cfg, key)
        if value is not None and value < 0:
            raise ConfigError(f"{key} must be >= 0, got {value}")
    for key in ("synth_per_class", "test_synth_per_class"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be >= 1, got {getattr(cfg, key)}")
    if cfg.source == "idx" and not (cfg.source_images and cfg.source_labels):
        raise ConfigError("source = idx needs source_images and source_labels")
    if cfg.source == "raw" and not cfg.source_raw:
        raise ConfigError("source = raw needs source_raw")
    if cfg.test == "idx" and not (cfg.test_images and cfg.test_labels):
        raise ConfigError("test = idx needs test_images and test_labels")
    if cfg.test == "raw" and not cfg.test_raw:
        raise ConfigError("test = raw needs test_raw")
    try:
        cfg.target_specs()
    except (ContractViolation, ValueError) as exc:
        raise ConfigError(f"targets: {exc}") from None


def parse_config(text):
    """Parse config text into a :class:`RunConfig`."""
    values = {}
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        key = ALIASES.get(key, key)
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        values[key] = _convert(key, raw, lineno)
    values.setdefault("epsilon", None)
    cfg = _apply(RunConfig(), values)
    cfg.text = text
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _load(kind, images, labels, raw, limit, per_class, seed, name):
    if kind == "synth":
        return synth_digits(per_class, seed, name=name)
    if kind == "idx":
        return load_idx(images, labels, limit=limit, name=name)
    ds = load_raw(raw, name=name)
    return ds if limit is None else ds.subset(np.arange(min(limit, len(ds))), name=name)


def load_datasets(cfg):
    """Returns (source, eval_sets) with eval_sets keyed by domain name.

    Targets are shifted copies of the test set, or of the source when there
    is no test set. Raises FormatError or OSError on unreadable data.
    """
    source = _load(cfg.source, cfg.source_images, cfg.source_labels, cfg.source_raw, cfg.source_limit,
                   cfg.synth_per_class, cfg.synth_seed, "source")
    evals = {}
    base = source
    if cfg.test != "none":
        base = _load(cfg.test, cfg.test_images, cfg.test_labels, cfg.test_raw, cfg.test_limit,
                     cfg.test_synth_per_class, cfg.test_synth_seed, "test")
        evals["test"] = base
    for i, spec in enumerate(cfg.target_specs(), start=1):
        name = f"target{i}"
        evals[name] = make_target_domain(base, spec, name=name)
    return source, evals

