import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from advst import losses
from advst.autodiff import Tensor
from advst.errors import ContractViolation, InfiniteCostError
from advst.gradsuite import loss_suite

import oracles


def _instance(rng, n=None, c=None, d=None):
    n = n or int(rng.integers(2, 7))
    c = c or int(rng.integers(2, 5))
    d = d or int(rng.integers(1, 6))
    logits = rng.normal(size=(n, c)) * 3
    labels = rng.integers(0, c, size=n)
    u = rng.normal(size=(n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return logits, labels, u


@pytest.mark.parametrize("case", loss_suite(0), ids=lambda c: c.name)
def test_loss_gradients(case):
    assert case.passed, f"{case.name}: {case.error:.3e}"


def test_against_loop_oracles(rng, f64):
    for _ in range(25):
        logits, labels, u = _instance(rng)
        v, w = rng.normal(size=(len(labels), 4)), rng.normal(size=(len(labels), 4))
        assert math.isclose(float(losses.cross_entropy(Tensor(logits), labels).data),
                            oracles.cross_entropy(logits.tolist(), labels.tolist()), abs_tol=1e-8)
        assert math.isclose(float(losses.entropy(Tensor(logits)).data), oracles.entropy(logits.tolist()),
                            abs_tol=1e-8)
        assert math.isclose(float(losses.contrastive(Tensor(u), labels).data),
                            oracles.contrastive(u.tolist(), labels.tolist()), abs_tol=1e-8)
        np.testing.assert_allclose(losses.feature_distance(Tensor(v), Tensor(w)).data,
                                   oracles.feature_distance(v.tolist(), w.tolist()), atol=1e-8)


def test_cross_entropy_of_uniform_logits_is_log_classes(f64):
    assert math.isclose(float(losses.cross_entropy(Tensor(np.zeros((3, 7))), [0, 3, 6]).data), math.log(7))


def test_entropy_bounds(f64):
    assert math.isclose(float(losses.entropy(Tensor(np.zeros((2, 5)))).data), math.log(5))
    assert float(losses.entropy(Tensor(np.array([[100.0, 0.0, 0.0]]))).data) < 1e-30


def test_feature_distance_infinite_between_labels(f64):
    v = Tensor(np.ones((2, 3)))
    with pytest.raises(InfiniteCostError):
        losses.feature_distance(v, v, labels=[0, 1], labels_prime=[0, 2])
    np.testing.assert_array_equal(losses.feature_distance(v, v, [0, 1], [0, 1]).data, 0.0)


def test_contrastive_without_positives_is_zero(f64, rng):
    _, _, u = _instance(rng, n=4, d=3)
    assert float(losses.contrastive(Tensor(u), [0, 1, 2, 3]).data) == 0.0


def test_contrastive_requires_two_samples(f64):
    with pytest.raises(ContractViolation):
        losses.contrastive(Tensor(np.ones((1, 3))), [0])


def test_label_range_checked(f64):
    with pytest.raises(ContractViolation):
        losses.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ContractViolation):
        losses.cross_entropy(Tensor(np.zeros((2, 3))), [0, 1, 2])


def test_minimization_loss_composition(f64, rng):
    logits, labels, u = _instance(rng, n=6)
    out = losses.minimization_loss(Tensor(logits), labels, Tensor(u), eta=2.5)
    c = out.components
    assert math.isclose(float(out.total.data), c["cross_entropy"] + c["contrastive"] - 2.5 * c["entropy"],
                        rel_tol=1e-12)
    plain = losses.minimization_loss(Tensor(logits), labels, Tensor(u), eta=0.0, use_contrastive=False)
    assert math.isclose(float(plain.total.data), c["cross_entropy"], rel_tol=1e-12)
    assert plain.components["contrastive"] == 0.0


def test_maximization_objective_composition(f64, rng):
    logits, labels, _ = _instance(rng, n=5)
    v, w = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    per = losses.maximization_objective(Tensor(logits), labels, v, Tensor(w), 3.0, 0.5, reduction="none").data
    ce = [oracles.cross_entropy([r], [y]) for r, y in zip(logits.tolist(), labels.tolist())]
    ent = [oracles.entropy([r]) for r in logits.tolist()]
    dist = oracles.feature_distance(v.tolist(), w.tolist())
    np.testing.assert_allclose(per, np.array(ce) - 3.0 * np.array(dist) + 0.5 * np.array(ent), atol=1e-10)
    scaled = losses.maximization_objective(Tensor(logits), labels, v, Tensor(w), 3.0, 0.5, reduction="none",
                                           per_dimension=True).data
    np.testing.assert_allclose(scaled, np.array(ce) - 3.0 / 8 * np.array(dist) + 0.5 * np.array(ent), atol=1e-10)
    total = losses.maximization_objective(Tensor(logits), labels, v, Tensor(w), 3.0, 0.5, reduction="sum").data
    assert math.isclose(float(total), per.sum(), rel_tol=1e-12)


def test_maximization_objective_rejects_negative_weights(f64):
    z = Tensor(np.zeros((1, 2)))
    with pytest.raises(ContractViolation):
        losses.maximization_objective(z, [0], np.zeros((1, 2)), Tensor(np.zeros((1, 2))), -1.0, 0.0)
    with pytest.raises(ContractViolation):
        losses.maximization_objective(z, [0], np.zeros((1, 2)), Tensor(np.zeros((1, 2))), 1.0, -0.1)


logit_rows = hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
                        elements=st.floats(-20, 20, allow_nan=False))


@given(logit_rows, st.data())
def test_cross_entropy_nonnegative_and_entropy_bounded(z, data):
    labels = data.draw(hnp.arrays(np.int64, z.shape[0], elements=st.integers(0, z.shape[1] - 1)))
    assert float(losses.cross_entropy(Tensor(z, dtype=np.float64), labels).data) >= 0
    h = float(losses.entropy(Tensor(z, dtype=np.float64)).data)
    assert -1e-12 <= h <= math.log(z.shape[1]) + 1e-12


@given(st.integers(0, 2**31))
def test_contrastive_invariant_to_batch_permutation(seed):
    rng = np.random.default_rng(seed)
    _, labels, u = _instance(rng, n=6, c=3, d=4)
    perm = rng.permutation(6)
    a = float(losses.contrastive(Tensor(u, dtype=np.float64), labels).data)
    b = float(losses.contrastive(Tensor(u[perm], dtype=np.float64), labels[perm]).data)
    assert math.isclose(a, b, rel_tol=1e-10, abs_tol=1e-12)


@given(st.integers(0, 2**31))
def test_feature_distance_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    v, w = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    d1 = losses.feature_distance(Tensor(v, dtype=np.float64), Tensor(w, dtype=np.float64)).data
    d2 = losses.feature_distance(Tensor(w, dtype=np.float64), Tensor(v, dtype=np.float64)).data
    np.testing.assert_allclose(d1, d2)
    assert np.all(d1 >= 0)
