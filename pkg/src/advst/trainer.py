"""Alternating min-max training over model weights and per-sample transform parameters.

Each epoch runs ``batches_per_epoch`` descent steps on batches drawn from the
domain pool, then builds one synthetic copy of the source by gradient ascent
on the parameters of a randomly drawn transform chain per sample. The pool
keeps the source plus the ``pool_size`` most recent synthetic copies.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classifier import ModelParams, forward, init_model, predict
from .data import Dataset
from .errors import ConfigError, ContractViolation, TrainingDivergence
from .losses import maximization_objective, minimization_loss
from .transforms import OP_INFO, ChainDistribution, TransformParams, apply_chain, clamp_params, init_params

log = logging.getLogger(__name__)

GENERATORS = ("semantic", "pixel", "none")
SCHEDULES = ("step", "cosine", "constant")
OPTIMIZERS = ("sgd", "adam")
DISTANCES = ("mean", "sum")
ASCENT_RULES = ("normalized", "plain")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    batches_per_epoch: int | None = None  # None: ceil(|source| / batch_size)
    ascent_steps: int = 5
    lam: float = 100.0
    ascent_lr: float = 0.2
    lr: float = 1e-4
    epsilon: float = 0.0
    eta: float = 10.0
    contrastive: bool = True
    pool_size: int = 2
    max_chain_length: int = 3
    early_stop_delta: float = 0.1
    lr_schedule: str = "step"
    lr_step_epoch: int = 25
    optimizer: str = "adam"
    generator: str = "semantic"
    distance: str = "mean"  # feature distance in the ascent: per-dimension mean or plain sum
    ascent_rule: str = "normalized"  # "plain": omega += ascent_lr * grad, every finite proposal accepted
    seed: int = 0
    timing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("epochs", "batch_size", "ascent_steps", "pool_size", "lr_step_epoch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 0:
            raise ConfigError(f"batches_per_epoch must be >= 0, got {self.batches_per_epoch}")
        for name in ("lam", "ascent_lr", "lr", "epsilon", "eta", "early_stop_delta"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a finite nonnegative number, got {value}")
        if self.max_chain_length < 1:
            raise ConfigError(f"max_chain_length must be >= 1, got {self.max_chain_length}")
        for name, allowed in (("lr_schedule", SCHEDULES), ("optimizer", OPTIMIZERS), ("generator", GENERATORS),
                              ("distance", DISTANCES), ("ascent_rule", ASCENT_RULES)):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def replace(self, **changes):
        return TrainConfig(**{**asdict(self), **changes})

    def n_batches(self, n_source):
        if self.batches_per_epoch is not None:
            return self.batches_per_epoch
        return max(1, math.ceil(n_source / self.batch_size))

    def lr_at(self, epoch):
        """Descent rate for 1-based ``epoch``."""
        if self.lr_schedule == "step":
            return self.lr * (0.1 if epoch > self.lr_step_epoch else 1.0)
        if self.lr_schedule == "cosine":
            return self.lr * 0.5 * (1 + math.cos(math.pi * (epoch - 1) / max(self.epochs, 1)))
        return self.lr


def erm_config(cfg):
    return cfg.replace(ascent_steps=0, pool_size=0, eta=0.0, contrastive=False, generator="none")


class DomainPool:
    """The source plus a ring buffer of the most recent generated domains."""

    def __init__(self, source, capacity):
        if capacity < 0:
            raise ContractViolation(f"pool capacity must be >= 0, got {capacity}")
        self.source = source
        self.capacity = capacity
        self.generated = deque(maxlen=capacity) if capacity else deque(maxlen=0)

    def add(self, domain):
        if len(domain) != len(self.source):
            raise ContractViolation(f"generated domain has {len(domain)} samples, source has {len(self.source)}")
        if not np.array_equal(domain.labels, self.source.labels):
            raise ContractViolation("generated domain labels differ from the source labels")
        if self.capacity:
            self.generated.append(domain)

    @property
    def domains(self):
        return [self.source, *self.generated]

    def __len__(self):
        return sum(len(d) for d in self.domains)

    def gather(self, index):
        """Images and labels for flat indices into the concatenation of all domains."""
        n = len(self.source)
        which, local = np.divmod(index, n)
        domains = self.domains
        images = np.empty((len(index),) + self.source.images.shape[1:], dtype=self.source.images.dtype)
        for d in np.unique(which):
            sel = which == d
            images[sel] = domains[d].images[local[sel]]
        return images, self.source.labels[local]


@dataclass
class GenerationResult:
    dataset: Dataset
    initial_objective: np.ndarray
    final_objective: np.ndarray
    feature_distance: np.ndarray
    steps: np.ndarray
    nonfinite: int = 0
    chains: list = field(default_factory=list)
    params: list = field(default_factory=list)


class TrainLog:
    FIXED = ("epoch", "ce", "contrastive", "entropy", "max_obj_start", "max_obj_end", "mean_feat_dist")

    def __init__(self, domains=()):
        self.domains = list(domains)
        self.records = []

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def columns(self):
        return [*self.FIXED, *(f"acc_{d}" for d in self.domains), "seconds"]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for rec in self.records:
            row = []
            for col in self.columns:
                value = rec.get(col, float("nan"))
                row.append(str(value) if col == "epoch" else f"{value:.6f}")
            writer.writerow(row)
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


# ---------------------------------------------------------------- maximization

def _dtype(model):
    return next(iter(model.arrays.values())).dtype


class _Perturbation:
    """Per-sample ascent variables. Subclasses define how a batch is rendered and stepped."""

    def build(self, states, images, dtype):
        """Return the transformed batch and, per sample, the list of leaf Tensors."""
        raise NotImplementedError

    def step_sample(self, i, state, grad, size):
        raise NotImplementedError

    def step_plain(self, i, state, grad, lr):
        raise NotImplementedError


class _SemanticPerturbation(_Perturbation):
    def __init__(self, chains):
        self.chains = chains
        self.widths = [[np.asarray(OP_INFO[op].widths()) for op in ch.ops] for ch in chains]

    def build(self, states, images, dtype):
        outs, leaves = [], []
        for i, (ch, p) in enumerate(zip(self.chains, states)):
            vals = [Tensor(v, requires_grad=v.size > 0, dtype=dtype) for v in p.values]
            leaves.append([t for t in vals if t.size])
            outs.append(apply_chain(ch, TransformParams(tuple(vals), p.frozen), Tensor(images[i:i + 1], dtype=dtype)))
        return ad.concat(outs, axis=0), leaves

    def step_sample(self, i, state, grad, size):
        widths = [w for v, w in zip(state.values, self.widths[i]) if v.size]
        scaled = [g * w for g, w in zip(grad, widths)]
        norm = math.sqrt(sum(float((s * s).sum()) for s in scaled))
        if norm == 0:
            return state
        it = iter(zip(scaled, widths))
        vals = []
        for v in state.values:
            if v.size:
                s, w = next(it)
                v = v + size * w * s / norm
            vals.append(v)
        return clamp_params(self.chains[i], state.with_values(vals))

    def step_plain(self, i, state, grad, lr):
        it = iter(grad)
        vals = [v + lr * next(it) if v.size else v for v in state.values]
        return clamp_params(self.chains[i], state.with_values(vals))


class _PixelPerturbation(_Perturbation):
    def build(self, states, images, dtype):
        leaves = [[Tensor(d[None], requires_grad=True, dtype=dtype)] for d in states]
        delta = ad.concat([lv[0] for lv in leaves], axis=0)
        return ad.clamp(Tensor(images, dtype=dtype) + delta, 0.0, 1.0), leaves

    def step_sample(self, i, state, grad, size):
        g = grad[0][0]
        norm = float(np.sqrt((g * g).sum()))
        return state if norm == 0 else state + (size * g / norm).astype(state.dtype)

    def step_plain(self, i, state, grad, lr):
        return np.clip(state + lr * grad[0][0], -1.0, 1.0).astype(state.dtype)


def _ascend(model, images, labels, cfg, pert, states):
    """Normalized gradient ascent on each sample's own objective.

    Coordinates are measured in units of their interval width (pixels have
    width 1) and each proposal moves a sample's variables a distance of
    ``step`` along its gradient in those units. A proposal that lowers a
    sample's objective is rejected and that sample's step is halved, so the
    per-sample objective never decreases. The loop ends after
    ``ascent_steps`` proposals or when the batch-mean objective changes by
    less than ``early_stop_delta``.

    ``ascent_rule = "plain"`` instead moves every sample by ``ascent_lr``
    times its raw gradient, clamps, and accepts unconditionally.
    """
    dtype = _dtype(model)
    frozen = model.tensors()
    with ad.no_graph():
        v = forward(frozen, Tensor(images, dtype=dtype)).embedding.data
    B = len(labels)

    def evaluate(candidate, need_grad):
        with ad.Graph() as graph:
            x_prime, leaves = pert.build(candidate, images, dtype)
            out = forward(frozen, x_prime)
            per_sample = maximization_objective(out.logits, labels, v, out.embedding, cfg.lam, cfg.epsilon,
                                                reduction="none", per_dimension=cfg.distance == "mean")
            obj = per_sample.data.astype(np.float64)
            dist = ((out.embedding.data.astype(np.float64) - v) ** 2).sum(axis=1)
            flat = [t for lv in leaves for t in lv]
            grads = None
            if need_grad and flat:
                # summed objective: each sample's gradient is that of its own objective
                gmap = graph.backward(ad.sum(per_sample), wrt=flat)
                grads = [[gmap[t].astype(np.float64) for t in lv] for lv in leaves]
        return x_prime.data.copy(), obj, dist, grads

    x, obj, dist, grads = evaluate(states, cfg.ascent_steps > 0)
    if not np.all(np.isfinite(obj)):
        raise TrainingDivergence("non-finite maximization objective at initial parameters", {"objective": obj})
    initial = obj.copy()
    size = np.full(B, cfg.ascent_lr)
    active = np.ones(B, dtype=bool)
    steps = np.zeros(B, dtype=np.int64)
    nonfinite = 0
    has_params = [bool(g) and any(np.any(gi) for gi in g) for g in grads] if grads else [False] * B
    active &= np.asarray(has_params, dtype=bool)
    plain = cfg.ascent_rule == "plain"
    for t in range(1, cfg.ascent_steps + 1):
        if not active.any():
            break
        if plain:
            proposal = [pert.step_plain(i, states[i], grads[i], cfg.ascent_lr) if active[i] else states[i]
                        for i in range(B)]
        else:
            proposal = [pert.step_sample(i, states[i], grads[i], size[i]) if active[i] else states[i]
                        for i in range(B)]
        x_new, obj_new, dist_new, grads_new = evaluate(proposal, t < cfg.ascent_steps)
        bad = active & ~np.isfinite(obj_new)
        nonfinite += int(bad.sum())
        active &= ~bad
        accept = active.copy() if plain else active & (obj_new > obj)
        previous_mean = obj.mean()
        for i in np.flatnonzero(accept):
            states[i] = proposal[i]
            if grads_new is not None:
                grads[i] = grads_new[i]
        x[accept] = x_new[accept]
        obj[accept] = obj_new[accept]
        dist[accept] = dist_new[accept]
        steps[accept] = t
        size[active & ~accept] *= 0.5
        # a round with every proposal rejected only shrinks steps; it is not convergence
        if accept.any() and abs(obj.mean() - previous_mean) < cfg.early_stop_delta:
            break
    if nonfinite:
        log.warning("%d samples stopped ascent at a non-finite objective", nonfinite)
    return np.clip(x, 0, 1), initial, obj, dist, steps, nonfinite


def _generate(model, source, cfg, make_batch, name):
    parts = {k: [] for k in ("images", "initial", "final", "dist", "steps")}
    nonfinite = 0
    for lo in range(0, len(source), cfg.batch_size):
        images = source.images[lo:lo + cfg.batch_size]
        labels = source.labels[lo:lo + cfg.batch_size]
        pert, states = make_batch(images)
        result = _ascend(model, images, labels, cfg, pert, states)
        for key, val in zip(parts, result[:5]):
            parts[key].append(val)
        nonfinite += result[5]
    ds = Dataset(np.concatenate(parts["images"]).astype(source.images.dtype), source.labels.copy(), name,
                 source.num_classes)
    return GenerationResult(ds, *(np.concatenate(parts[k]) for k in ("initial", "final", "dist", "steps")),
                            nonfinite=nonfinite)


def generate_domain(model, source, dist, cfg, rng, name="generated"):
    """Worst-case copy of ``source``: one chain and parameter set per sample, ascended in batches."""
    if not isinstance(dist, ChainDistribution):
        raise ContractViolation("dist must be a ChainDistribution")
    chains, params = [], []

    def make_batch(images):
        batch_chains = [dist.sample(rng) for _ in range(len(images))]
        states = [init_params(ch, rng) for ch in batch_chains]
        chains.extend(batch_chains)
        params.append(states)  # updated in place by the ascent
        return _SemanticPerturbation(batch_chains), states

    result = _generate(model, source, cfg, make_batch, name)
    result.chains = chains
    result.params = [p for batch in params for p in batch]
    return result


def generate_domain_pixel(model, source, cfg, rng=None, name="generated"):
    """Same ascent loop with an additive per-pixel perturbation starting at zero."""
    dtype = _dtype(model)

    def make_batch(images):
        return _PixelPerturbation(), [np.zeros(images.shape[1:], dtype=dtype) for _ in range(len(images))]

    return _generate(model, source, cfg, make_batch, name)


# ---------------------------------------------------------------- minimization

class Optimizer:
    """Plain SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8) over a ModelParams in place."""

    def __init__(self, kind="sgd"):
        if kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model, grads, lr):
        self.t += 1
        for name, g in grads.items():
            p = model.arrays[name]
            if self.kind == "sgd":
                p -= (lr * g).astype(p.dtype)
                continue
            g = g.astype(p.dtype)  # scratch copy; the caller keeps its gradient
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            g *= g
            g *= 0.001
            v += g
            denom = np.sqrt(v, out=g)
            denom /= math.sqrt(1 - 0.999 ** self.t)
            denom += 1e-8
            np.divide(m, denom, out=denom)
            denom *= lr / (1 - 0.9 ** self.t)
            p -= denom


def minimize_epoch(model, pool, cfg, rng, lr, optimizer=None, n_batches=None, epoch=None):
    """``n_batches`` descent steps on uniform draws from the pool. Mutates ``model`` in place."""
    if len(pool) == 0:
        raise ContractViolation("cannot minimize over an empty pool")
    optimizer = optimizer or Optimizer(cfg.optimizer)
    n_batches = cfg.n_batches(len(pool.source)) if n_batches is None else n_batches
    dtype = _dtype(model)
    sums = {"cross_entropy": 0.0, "contrastive": 0.0, "entropy": 0.0}
    for b in range(n_batches):
        index = rng.choice(len(pool), size=min(cfg.batch_size, len(pool)), replace=False)
        images, labels = pool.gather(index)
        with ad.Graph() as graph:
            params = model.tensors(requires_grad=True)
            out = forward(params, Tensor(images, dtype=dtype))
            loss = minimization_loss(out.logits, labels, out.projection, cfg.eta, cfg.contrastive)
            if not np.isfinite(loss.total.data):
                raise TrainingDivergence(
                    f"non-finite minimization loss at epoch {epoch}, batch {b}",
                    {"epoch": epoch, "batch": b, "components": loss.components, "model": model.copy()})
            grads = graph.backward(loss.total, wrt=list(params.values()))
        optimizer.step(model, {k: grads[t] for k, t in params.items()}, lr)
        for k in sums:
            sums[k] += loss.components[k]
    return {k: v / max(n_batches, 1) for k, v in sums.items()}


# ---------------------------------------------------------------- evaluation and driver

def evaluate(model, datasets):
    """Accuracy per named dataset."""
    if isinstance(datasets, Dataset):
        datasets = {datasets.name: datasets}
    out = {}
    for name, ds in datasets.items():
        if len(ds) == 0:
            raise ContractViolation(f"cannot evaluate on empty dataset {name!r}")
        if ds.num_classes != model.num_classes:
            raise ContractViolation(f"{name}: {ds.num_classes} classes but model has {model.num_classes}")
        out[name] = float((predict(model, ds.images) == ds.labels).mean())
    return out


def _streams(seed):
    init, minim, gen = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(minim), np.random.default_rng(gen)


def train(cfg, source, dist=None, eval_sets=None, model=None, callback=None):
    """Run the alternating procedure. Returns (model, log, pool)."""
    cfg.validate()
    dist = dist or ChainDistribution(l_max=cfg.max_chain_length)
    eval_sets = dict(eval_sets or {})
    init_rng, min_rng, gen_rng = _streams(cfg.seed)
    model = model.copy() if model is not None else init_model(source.num_classes, init_rng)
    pool = DomainPool(source, cfg.pool_size)
    optimizer = Optimizer(cfg.optimizer)
    train_log = TrainLog(eval_sets)
    n_batches = cfg.n_batches(len(source))
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        stats = minimize_epoch(model, pool, cfg, min_rng, cfg.lr_at(epoch), optimizer, n_batches, epoch)
        record = {"epoch": epoch, "ce": stats["cross_entropy"], "contrastive": stats["contrastive"],
                  "entropy": stats["entropy"], "max_obj_start": float("nan"), "max_obj_end": float("nan"),
                  "mean_feat_dist": float("nan")}
        if cfg.generator != "none" and cfg.pool_size > 0:
            if cfg.generator == "semantic":
                result = generate_domain(model, source, dist, cfg, gen_rng, name=f"generated_{epoch}")
            else:
                result = generate_domain_pixel(model, source, cfg, gen_rng, name=f"generated_{epoch}")
            pool.add(result.dataset)
            record.update(max_obj_start=float(result.initial_objective.mean()),
                          max_obj_end=float(result.final_objective.mean()),
                          mean_feat_dist=float(result.feature_distance.mean()))
        for name, acc in evaluate(model, eval_sets).items() if eval_sets else ():
            record[f"acc_{name}"] = acc
        record["seconds"] = time.perf_counter() - start if cfg.timing else 0.0
        train_log.append(record)
        log.info("epoch %d: %s", epoch, {k: round(v, 4) for k, v in record.items() if k != "epoch"})
        if callback is not None:
            callback(epoch, model, record)
    return model, train_log, pool


def train_erm(cfg, source, eval_sets=None, model=None):
    """Cross-entropy only: no generation, no pool growth, no regularizers."""
    return train(erm_config(cfg), source, None, eval_sets, model)
