"""Finite-difference suites for every differentiable piece of the package.

Every case compares the analytic gradient of a random weighted sum of the
output against central differences in float64. The autodiff suite has one
case per registered primitive; a primitive without a case is reported as a
failure so coverage cannot silently drop.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import PRIMITIVES, Tensor, finite_difference_check
from .classifier import forward, init_model
from .transforms import ALL_OPS, OP_INFO, BaseOpKind, TransformChain, TransformParams, apply_base, apply_chain

RTOL = 1e-4
RTOL_GRID = 1e-3
H = 1e-6
# the end-to-end step must stay below the distance to the nearest relu/maxpool kink
H_PIPELINE = 1e-7


@dataclass
class CaseResult:
    suite: str
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tol)


def _contract(out, weights, avoid):
    """Scalar <out, weights> built without the primitive under test, so a broken rule cannot cancel itself."""
    if avoid in ("mul", "sum"):
        return ad.reshape(ad.reshape(out, (1, -1)) @ weights.reshape(-1, 1), ())
    return ad.sum(out * weights)


def _check(fn, inputs, rng, max_coords=None, name=None):
    """Worst error over each input of ``fn(*inputs)`` contracted with random weights."""
    with ad.default_dtype(np.float64):
        out = fn(*[Tensor(x) for x in inputs])
        weights = rng.normal(size=out.shape)
        worst = 0.0
        for k in range(len(inputs)):
            def f(xk, k=k):
                args = [xk if j == k else Tensor(x) for j, x in enumerate(inputs)]
                return _contract(fn(*args), weights, name)
            worst = max(worst, finite_difference_check(f, np.asarray(inputs[k], dtype=np.float64), h=H,
                                                       max_coords=max_coords, rng=rng))
    return worst


def _away_from(rng, shape, points, gap=0.1, lo=-2.0, hi=2.0):
    x = rng.uniform(lo, hi, size=shape)
    for p in points:
        near = np.abs(x - p) < gap
        x[near] += np.where(x[near] >= p, gap, -gap)
    return x


def _primitive_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    distinct = rng.permutation(24).reshape(2, 3, 4) * 0.1 + rng.uniform(0, 0.01, size=(2, 3, 4))
    img = rng.uniform(size=(2, 3, 5, 6))
    grid = rng.uniform(-1.1, 1.1, size=(2, 4, 4, 2))
    return {
        "add": (lambda x, y: x + y, [a, b], RTOL),
        "sub": (lambda x, y: x - y, [a, b], RTOL),
        "mul": (lambda x, y: x * y, [a, b], RTOL),
        "div": (lambda x, y: x / y, [a, rng.uniform(0.5, 2.0, size=4) * rng.choice([-1, 1], size=4)], RTOL),
        "neg": (lambda x: -x, [a], RTOL),
        "exp": (ad.exp, [a], RTOL),
        "log": (ad.log, [pos], RTOL),
        "power": (lambda x: ad.power(x, 2.5), [pos], RTOL),
        "sin": (ad.sin, [a], RTOL),
        "cos": (ad.cos, [a], RTOL),
        "sigmoid": (ad.sigmoid, [a * 3], RTOL),
        "relu": (ad.relu, [_away_from(rng, (3, 4), [0.0])], RTOL),
        "clamp": (lambda x: ad.clamp(x, -0.5, 0.5), [_away_from(rng, (3, 4), [-0.5, 0.5])], RTOL),
        "minimum": (ad.minimum, [distinct[0], distinct[1]], RTOL),
        "maximum": (ad.maximum, [distinct[0], distinct[1]], RTOL),
        "where": (lambda x, y: ad.where(a > 0, x, y), [pos, a], RTOL),
        "mod": (lambda x: ad.mod(x, 1.0), [_away_from(rng, (3, 4), [-2, -1, 0, 1, 2], gap=0.05)], RTOL),
        "straight_through": (lambda x: ad.straight_through(x, lambda v: v + 1.0), [a], RTOL),
        "matmul": (ad.matmul, [a, rng.normal(size=(4, 5))], RTOL),
        "conv2d": (ad.conv2d, [rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)], RTOL),
        "maxpool2": (ad.maxpool2, [distinct.reshape(1, 2, 3, 4)[:, :, :2, :]], RTOL),
        "sum": (lambda x: ad.sum(x, axis=(0, 2), keepdims=True), [rng.normal(size=(2, 3, 4))], RTOL),
        "mean": (lambda x: ad.mean(x, axis=1), [rng.normal(size=(2, 3, 4))], RTOL),
        "max": (lambda x: ad.amax(x, axis=1), [distinct], RTOL),
        "min": (lambda x: ad.amin(x, axis=2), [distinct], RTOL),
        "softmax": (ad.softmax, [rng.normal(size=(3, 5))], RTOL),
        "log_softmax": (ad.log_softmax, [rng.normal(size=(3, 5))], RTOL),
        "l2_normalize": (ad.l2_normalize, [rng.normal(size=(3, 5))], RTOL),
        "concat": (lambda x, y: ad.concat([x, y], axis=1), [a, rng.normal(size=(3, 2))], RTOL),
        "reshape": (lambda x: ad.reshape(x, (2, 6)), [a], RTOL),
        "transpose": (lambda x: ad.transpose(x, (2, 0, 1)), [rng.normal(size=(2, 3, 4))], RTOL),
        "gather": (lambda x: x[np.array([0, 2, 2]), 1:], [a], RTOL),
        "grid_sample": (ad.grid_sample, [img, grid], RTOL_GRID),
    }


def primitive_suite(seed=0):
    rng = np.random.default_rng(seed)
    cases = _primitive_cases(rng)
    results = []
    for name in sorted(PRIMITIVES):
        if name not in cases:
            results.append(CaseResult("autodiff", name, float("inf"), RTOL))
            continue
        fn, inputs, tol = cases[name]
        try:
            err = _check(fn, inputs, rng, name=name)
        except Exception:  # noqa: BLE001 -- a crashing backward is a failed case
            err = float("inf")
        results.append(CaseResult("autodiff", name, err, tol))
    return results


def _interior_params(kind, rng):
    info = OP_INFO[kind]
    lo, hi = np.array(info.lo), np.array(info.hi)
    return lo + (hi - lo) * rng.uniform(0.2, 0.8, size=info.n_params)


def transform_suite(seed=0):
    rng = np.random.default_rng(seed)
    results = []
    for kind in ALL_OPS:
        if not OP_INFO[kind].differentiable:
            continue
        images = rng.uniform(0.1, 0.9, size=(1, 3, 8, 8))
        params = _interior_params(kind, rng)
        tol = RTOL_GRID if kind in (BaseOpKind.SHEAR, BaseOpKind.TRANSLATE, BaseOpKind.ROTATE, BaseOpKind.SCALE) \
            else RTOL
        try:
            err = _check(lambda p, x, kind=kind: apply_base(kind, p, x), [params, images], rng, max_coords=24)
        except Exception:  # noqa: BLE001
            err = float("inf")
        results.append(CaseResult("transforms", kind.value, err, tol))
    return results


def loss_suite(seed=0):
    rng = np.random.default_rng(seed)
    labels = np.array([0, 1, 1, 2])
    logits = rng.normal(size=(4, 3))
    u = rng.normal(size=(4, 6))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v, v2 = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    cases = {
        "cross_entropy": (lambda z: losses.cross_entropy(z, labels), [logits]),
        "entropy": (losses.entropy, [logits]),
        "feature_distance": (losses.feature_distance, [v, v2]),
        "contrastive": (lambda q: losses.contrastive(q, labels), [u]),
        "minimization_loss": (lambda z, q: losses.minimization_loss(z, labels, q, 10.0).total, [logits, u]),
        "maximization_objective": (
            lambda z, w: losses.maximization_objective(z, labels, Tensor(v), w, 0.5, 2.0), [logits, v2]),
    }
    results = []
    for name, (fn, inputs) in cases.items():
        results.append(CaseResult("losses", name, _check(fn, inputs, rng), RTOL))
    return results


PIPELINE_CHAINS = (
    (BaseOpKind.ROTATE, BaseOpKind.HSV, BaseOpKind.CONTRAST),
    (BaseOpKind.TRANSLATE, BaseOpKind.SOLARIZE, BaseOpKind.SHARPNESS),
    (BaseOpKind.SCALE, BaseOpKind.SHEAR, BaseOpKind.INVERT),
)


def pipeline_suite(seed=0):
    """d(maximization objective)/d(omega) through chain, classifier and losses."""
    rng = np.random.default_rng(seed)
    results = []
    with ad.default_dtype(np.float64):
        model = init_model(10, rng, dtype=np.float64)
        frozen = model.tensors()
        images = rng.uniform(0.05, 0.95, size=(2, 3, 32, 32))
        labels = np.array([3, 7])
        with ad.no_graph():
            v = forward(frozen, Tensor(images)).embedding.data
        for ops in PIPELINE_CHAINS:
            chain = TransformChain(ops)
            sizes = [OP_INFO[o].n_params for o in ops]
            omega = np.concatenate([_interior_params(o, rng) for o in ops])

            def objective(w, chain=chain, sizes=sizes):
                parts, start = [], 0
                for n in sizes:
                    parts.append(w[start:start + n])
                    start += n
                x = apply_chain(chain, TransformParams(tuple(parts), ({},) * len(sizes)), Tensor(images))
                out = forward(frozen, x)
                return losses.maximization_objective(out.logits, labels, v, out.embedding, 1.0, 1.0)

            err = finite_difference_check(objective, omega, h=H_PIPELINE)
            results.append(CaseResult("pipeline", str(chain), err, RTOL_GRID))
    return results


SUITES = {
    "autodiff": primitive_suite,
    "transforms": transform_suite,
    "losses": loss_suite,
    "pipeline": pipeline_suite,
}


def run_all(names=None, seed=0):
    results = []
    for name in names or SUITES:
        results.extend(SUITES[name](seed))
    return results


def format_report(results):
    lines = [f"{'suite':<11} {'case':<34} {'max rel err':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.suite:<11} {r.name:<34} {r.error:>12.3e} {r.tol:>8.0e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} cases within tolerance")
    return "\n".join(lines)
