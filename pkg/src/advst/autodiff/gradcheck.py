"""Central finite-difference checks of analytic gradients."""

import numpy as np

from ..errors import ContractViolation, GradientCheckError
from .tensor import Graph, Tensor, default_dtype, no_graph


def analytic_gradient(f, x):
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    with Graph() as g:
        xt = Tensor(x.copy(), requires_grad=True, dtype=x.dtype)
        loss = f(xt)
    return g.backward(loss, wrt=[xt])[xt]


def finite_difference_check(f, x, h=1e-6, coords=None, max_coords=None, rng=None):
    """Max over coordinates of ``|analytic - central| / max(1, |central|)``.

    ``f`` maps a Tensor to a scalar Tensor. ``coords`` (flat indices) or
    ``max_coords`` (a random subset, drawn with ``rng``) limit the number of
    perturbed coordinates for large inputs.
    """
    if h <= 0:
        raise ContractViolation(f"finite_difference_check: step must be positive, got {h}")
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    with default_dtype(x.dtype):
        analytic = analytic_gradient(f, x).ravel()
        if coords is None:
            coords = np.arange(x.size)
            if max_coords is not None and x.size > max_coords:
                rng = rng if rng is not None else np.random.default_rng(0)
                coords = np.sort(rng.choice(x.size, size=max_coords, replace=False))
        flat = x.copy().ravel()
        worst = 0.0
        with no_graph():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(Tensor(flat.reshape(x.shape), dtype=x.dtype)).data)
                flat[i] = orig - h
                fm = float(f(Tensor(flat.reshape(x.shape), dtype=x.dtype)).data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise GradientCheckError(f"non-finite evaluation at coordinate {int(i)}")
                numeric = (fp - fm) / (2 * h)
                err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst
