"""Command-line entry point: ``advst {train,eval,gradcheck,ablate,export}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import gradsuite
from .classifier import EMBED_DIM, embed, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, load_datasets
from .data import load_idx, load_raw, make_target_domain, synth_digits
from .errors import AdvSTError, TrainingDivergence
from .imageio import write_grid
from .trainer import evaluate, generate_domain, train
from .transforms import ChainDistribution

log = logging.getLogger("advst")

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_ERROR = 2
EXIT_DIVERGED = 3

# (semantics, contrastive, entropy) per ablation row; row 1 swaps in pixel-space ascent
ABLATION = (
    (1, False, False, False),
    (2, True, False, False),
    (3, True, True, False),
    (4, True, False, True),
    (5, True, True, True),
)


class UsageError(AdvSTError):
    pass


# ---------------------------------------------------------------- helpers

def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    return f"{x:.6f}"


def _base_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return cfg.with_overrides(**overrides) if overrides else cfg


def parse_sweep(text):
    """``key=v1,v2`` -> (key, [v1, v2]) with values kept as strings."""
    key, sep, values = text.partition("=")
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not sep or not key.strip() or not items:
        raise UsageError(f"--sweep expects KEY=V1,V2,..., got {text!r}")
    return key.strip(), items


@dataclass
class DataArg:
    name: str
    kind: str
    args: list


def parse_data_arg(text):
    """``NAME=idx:IMAGES:LABELS``, ``NAME=raw:PATH`` or ``NAME=synth:PER_CLASS[:SEED]``."""
    name, sep, rest = text.partition("=")
    kind, _, tail = rest.partition(":")
    parts = tail.split(":") if tail else []
    expected = {"idx": (2, 2), "raw": (1, 1), "synth": (1, 2)}
    if not sep or not name or kind not in expected or not expected[kind][0] <= len(parts) <= expected[kind][1]:
        raise UsageError(f"bad --data {text!r}; use NAME=idx:IMAGES:LABELS, NAME=raw:PATH or NAME=synth:N[:SEED]")
    return DataArg(name, kind, parts)


def _load_data_arg(spec, limit):
    if spec.kind == "idx":
        return load_idx(spec.args[0], spec.args[1], limit=limit, name=spec.name)
    if spec.kind == "raw":
        ds = load_raw(spec.args[0], name=spec.name)
    else:
        seed = int(spec.args[1]) if len(spec.args) > 1 else 0
        ds = synth_digits(int(spec.args[0]), seed, name=spec.name)
    return ds if limit is None else ds.subset(np.arange(min(limit, len(ds))), name=spec.name)


def _eval_datasets(args):
    """Datasets named on the command line, else the source, test and targets of ``--config``."""
    domains = {}
    if args.data:
        for text in args.data:
            spec = parse_data_arg(text)
            domains[spec.name] = _load_data_arg(spec, args.limit)
    elif args.config:
        cfg = load_config(args.config)
        source, evals = load_datasets(cfg)
        domains = {"source": source, **evals}
        if args.limit is not None:
            domains = {k: v.subset(np.arange(min(args.limit, len(v))), name=k) for k, v in domains.items()}
    for text in args.shift or ():
        name, sep, rest = text.partition("=")
        base, _, spec = rest.partition(":")
        if not sep or base not in domains or not spec:
            raise UsageError(f"bad --shift {text!r}; use NAME=BASE_DOMAIN:SHIFT with a known base domain")
        domains[name] = make_target_domain(domains[base], spec, name=name)
    if not domains:
        raise UsageError("no datasets: pass --data NAME=... or --config")
    return domains


# ---------------------------------------------------------------- train

def run_training(cfg, quiet=False):
    """Train one configuration and write its artifacts. Returns (model, log, evals)."""
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.text)
    with open(os.path.join(cfg.out, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.resolved_text())
    with ad.default_dtype(cfg.np_dtype):
        source, evals = load_datasets(cfg)
        tcfg = cfg.effective_train
        try:
            model, train_log, pool = train(tcfg, source, ChainDistribution(l_max=tcfg.max_chain_length), evals)
        except TrainingDivergence as exc:
            _dump_divergence(cfg.out, exc)
            raise
    save_checkpoint(os.path.join(cfg.out, "model.ckpt"), model)
    train_log.write(os.path.join(cfg.out, "log.csv"))
    generated = pool.domains[1:] if len(pool.domains) > 1 else []
    if generated:
        write_grid(os.path.join(cfg.out, "generated.ppm"), generated[-1].images[:100])
    if not quiet:
        final = train_log.records[-1] if train_log.records else {}
        for name in evals:
            if f"acc_{name}" in final:
                print(f"{name:<12} accuracy {final[f'acc_{name}']:.4f}")
    return model, train_log, evals


def _dump_divergence(out, exc):
    state = dict(exc.state)
    model = state.pop("model", None)
    if model is not None:
        save_checkpoint(os.path.join(out, "divergence.ckpt"), model)
    with open(os.path.join(out, "divergence.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{exc}\n")
        for key, value in state.items():
            fh.write(f"{key} = {value}\n")


def cmd_train(args):
    cfg = _base_config(args)
    if not args.sweep:
        run_training(cfg)
        return EXIT_OK
    key, values = parse_sweep(args.sweep)
    rows, domains = [], None
    for value in values:
        run = cfg.with_overrides(**{key: value, "out": os.path.join(cfg.out, f"{key}={value}")})
        print(f"== {key} = {value}")
        _, train_log, evals = run_training(run)
        domains = domains or list(evals)
        final = train_log.records[-1] if train_log.records else {}
        rows.append([value] + [_fmt(final.get(f"acc_{d}", float("nan"))) for d in domains])
    _write_csv(os.path.join(cfg.out, "sweep.csv"), [key] + [f"acc_{d}" for d in domains or []], rows)
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    domains = _eval_datasets(args)
    acc = evaluate(model, domains)
    rows = [[name, _fmt(acc[name]), len(domains[name])] for name in domains]
    for name, a, n in rows:
        print(f"{name:<12} accuracy {a}  n={n}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "eval.csv"), ["domain", "accuracy", "n"], rows)
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args):
    results = gradsuite.run_all(args.suite or None, seed=args.seed or 0)
    print(gradsuite.format_report(results))
    failed = [r for r in results if not r.passed]
    if failed:
        print("offenders: " + ", ".join(f"{r.suite}/{r.name}" for r in failed), file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


# ---------------------------------------------------------------- ablate

def ablation_config(base, row):
    """TrainConfig for ablation row 1..5 derived from ``base`` (a RunConfig)."""
    index, semantics, contrastive, entropy = ABLATION[row - 1]
    tcfg = base.train.replace(generator="semantic" if semantics else "pixel", contrastive=contrastive,
                              eta=base.train.eta if entropy else 0.0)
    return tcfg


def run_ablation(base, seeds, out=None):
    """Returns (domains, per-run rows, summary rows)."""
    runs, domains = [], None
    with ad.default_dtype(base.np_dtype):
        source, evals = load_datasets(base)
        domains = list(evals)
        if not domains:
            raise UsageError("ablation needs evaluation domains: set test and/or targets in the config")
        for index, semantics, contrastive, entropy in ABLATION:
            for seed in seeds:
                tcfg = ablation_config(base, index).replace(seed=seed)
                _, train_log, _ = train(tcfg, source, ChainDistribution(l_max=tcfg.max_chain_length), evals)
                final = train_log.records[-1]
                accs = [final[f"acc_{d}"] for d in domains]
                runs.append([index, int(semantics), int(contrastive), int(entropy), seed] + accs)
                log.info("ablation row %d seed %d: %s", index, seed, dict(zip(domains, accs)))
    summary = []
    for index, semantics, contrastive, entropy in ABLATION:
        accs = np.array([r[5:] for r in runs if r[0] == index], dtype=float)
        summary.append([index, int(semantics), int(contrastive), int(entropy), len(seeds)]
                       + [v for d in range(len(domains)) for v in (accs[:, d].mean(), accs[:, d].std())])
    if out:
        os.makedirs(out, exist_ok=True)
        head = ["config", "semantics", "contrastive", "entropy"]
        _write_csv(os.path.join(out, "ablate_runs.csv"), head + ["seed"] + [f"acc_{d}" for d in domains],
                   [r[:5] + [_fmt(a) for a in r[5:]] for r in runs])
        _write_csv(os.path.join(out, "ablate.csv"),
                   head + ["n_seeds"] + [f"acc_{d}_{s}" for d in domains for s in ("mean", "std")],
                   [r[:5] + [_fmt(a) for a in r[5:]] for r in summary])
    return domains, runs, summary


def cmd_ablate(args):
    base = _base_config(args)
    first = base.train.seed
    seeds = list(range(first, first + args.repeats))
    domains, _, summary = run_ablation(base, seeds, base.out)
    print("config semantics contrastive entropy " + " ".join(f"{d}(mean±std)" for d in domains))
    for row in summary:
        stats = " ".join(f"{row[5 + 2 * i]:.4f}±{row[6 + 2 * i]:.4f}" for i in range(len(domains)))
        print(f"{row[0]:>6} {row[1]:>9} {row[2]:>11} {row[3]:>7} {stats}")
    return EXIT_OK


# ---------------------------------------------------------------- export

def export_embeddings(model, domains, path):
    header = ["domain", "label"] + [f"v_{i}" for i in range(1, EMBED_DIM + 1)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for name, ds in domains.items():
            feats = embed(model, ds.images)
            for label, row in zip(ds.labels, feats):
                writer.writerow([name, int(label)] + [repr(float(x)) for x in row])


def cmd_export(args):
    model = load_checkpoint(args.checkpoint)
    domains = _eval_datasets(args)
    if args.generate:
        cfg = load_config(args.config) if args.config else RunConfig()
        tcfg = cfg.train.replace(seed=args.seed) if args.seed is not None else cfg.train
        base = domains[args.generate] if args.generate in domains else None
        if base is None:
            raise UsageError(f"--generate {args.generate!r} is not one of {list(domains)}")
        rng = np.random.default_rng(tcfg.seed)
        result = generate_domain(model, base, ChainDistribution(l_max=tcfg.max_chain_length), tcfg, rng,
                                 name="generated")
        domains["generated"] = result.dataset
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    export_embeddings(model, domains, os.path.join(out, "embeddings.csv"))
    if args.preview:
        shown = domains.get("generated") or next(iter(domains.values()))
        write_grid(os.path.join(out, args.preview), shown.images[:100])
    print(f"wrote {sum(len(d) for d in domains.values())} embeddings to {os.path.join(out, 'embeddings.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="advst", description="Adversarial semantics-transformation training.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="flat key = value run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=out_help)

    def data_flags(p):
        p.add_argument("--data", action="append", metavar="NAME=KIND:ARGS",
                       help="dataset: NAME=idx:IMAGES:LABELS, NAME=raw:PATH or NAME=synth:PER_CLASS[:SEED]")
        p.add_argument("--shift", action="append", metavar="NAME=BASE:SPEC",
                       help="shifted copy of another domain, e.g. target=test:invert+translate(0.15,0)")
        p.add_argument("--limit", type=int, help="keep the first N samples of every domain")

    p = sub.add_parser("train", help="train one configuration or a sweep")
    common(p, "output directory (overrides the config)")
    p.add_argument("--sweep", metavar="KEY=V1,V2", help="train once per value, each in OUT/KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-domain accuracy of a checkpoint")
    p.add_argument("checkpoint")
    common(p, "directory for eval.csv")
    data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--suite", action="append", choices=sorted(gradsuite.SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="the five regularizer/generator ablation rows")
    common(p, "directory for ablate.csv and ablate_runs.csv")
    p.add_argument("--repeats", type=int, default=1, help="seeds SEED..SEED+N-1 per row")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export", help="embedding CSV and optional sample preview")
    p.add_argument("checkpoint")
    common(p, "directory for embeddings.csv and the preview")
    data_flags(p)
    p.add_argument("--generate", metavar="DOMAIN", help="also export a generated copy of DOMAIN")
    p.add_argument("--preview", metavar="FILE", help="grid of generated (else first-domain) samples; .pgm or .ppm")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (AdvSTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
