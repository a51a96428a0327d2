"""Scalar objectives for the minimization and maximization steps."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, InfiniteCostError


@dataclass
class LossBreakdown:
    total: Tensor
    components: dict = field(default_factory=dict)


def _labels(labels, n_classes=None):
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is not None and labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractViolation(f"labels must lie in [0, {n_classes}), got [{labels.min()}, {labels.max()}]")
    return labels


def per_sample_cross_entropy(logits, labels):
    labels = _labels(labels, logits.shape[1])
    if labels.shape != (logits.shape[0],):
        raise ContractViolation(f"cross_entropy: {labels.shape} labels for logits {logits.shape}")
    logp = ad.log_softmax(logits)
    return -logp[np.arange(len(labels)), labels]


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of the true class."""
    return ad.mean(per_sample_cross_entropy(logits, labels))


def entropy(logits, per_sample=False):
    """Output entropy sum_j -p_j log p_j, averaged over the batch unless ``per_sample``."""
    logp = ad.log_softmax(logits)
    h = -ad.sum(ad.exp(logp) * logp, axis=-1)
    return h if per_sample else ad.mean(h)


def feature_distance(v, v_prime, labels=None, labels_prime=None):
    """Per-sample squared Euclidean distance between embeddings."""
    v, v_prime = ad.as_tensor(v), ad.as_tensor(v_prime)
    if v.shape != v_prime.shape:
        raise ContractViolation(f"feature_distance: shapes {v.shape} and {v_prime.shape} differ")
    if labels is not None and labels_prime is not None:
        if np.any(np.asarray(labels) != np.asarray(labels_prime)):
            raise InfiniteCostError("transport cost is infinite between samples with different labels")
    diff = v - v_prime
    return ad.sum(diff * diff, axis=-1)


def contrastive(u, labels):
    """Supervised contrastive loss over a batch of unit-norm projections (temperature 1).

    Summed over anchors; anchors without a same-label partner contribute 0.
    """
    labels = _labels(labels)
    B = u.shape[0]
    if B < 2:
        raise ContractViolation(f"contrastive: need a batch of at least 2, got {B}")
    offdiag = 1.0 - np.eye(B)
    sim = u @ ad.transpose(u, (1, 0))
    denom = ad.sum(ad.exp(sim) * offdiag, axis=1, keepdims=True)
    log_prob = sim - ad.log(denom)
    positives = (labels[:, None] == labels[None, :]) & (offdiag > 0)
    counts = positives.sum(axis=1, keepdims=True)
    weights = np.divide(positives, counts, out=np.zeros((B, B)), where=counts > 0)
    return -ad.sum(log_prob * weights)


def minimization_loss(logits, labels, u, eta, use_contrastive=True):
    """cross_entropy + contrastive - eta * entropy."""
    ce = cross_entropy(logits, labels)
    total = ce
    parts = {"cross_entropy": float(ce.data)}
    if use_contrastive and u.shape[0] >= 2:
        sc = contrastive(u, labels)
        total = total + sc
        parts["contrastive"] = float(sc.data)
    else:
        parts["contrastive"] = 0.0
    if eta:
        ent = entropy(logits)
        total = total - ent * eta
        parts["entropy"] = float(ent.data)
    else:
        parts["entropy"] = float(entropy(ad.Tensor(logits.data)).data)
    return LossBreakdown(total, parts)


def maximization_objective(logits_prime, labels, v, v_prime, lam, epsilon, reduction="mean", per_dimension=False):
    """Per-sample CE(x') - lam * ||v - v'||^2 + epsilon * entropy(x').

    ``v`` is the embedding of the untransformed input and is treated as a
    constant. With ``reduction="sum"`` the gradient with respect to each
    sample's own parameters is that sample's objective gradient.
    ``per_dimension`` divides the squared distance by the embedding width.
    """
    if lam < 0 or epsilon < 0:
        raise ContractViolation(f"lambda and epsilon must be nonnegative, got {lam}, {epsilon}")
    v = Tensor(v.data if isinstance(v, Tensor) else v, dtype=v_prime.dtype)
    obj = per_sample_cross_entropy(logits_prime, labels)
    if lam:
        scale = lam / v_prime.shape[-1] if per_dimension else lam
        obj = obj - feature_distance(v, v_prime) * scale
    if epsilon:
        obj = obj + entropy(logits_prime, per_sample=True) * epsilon
    if reduction == "none":
        return obj
    if reduction == "sum":
        return ad.sum(obj)
    return ad.mean(obj)
