"""Functional front-end over the primitive registry."""

import numpy as np

from .primitives import primitive_forward as _p
from .tensor import Tensor, as_tensor, get_default_dtype


def _t(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_default_dtype()))


def add(a, b):
    return _p("add", (_t(a), _t(b)))


def sub(a, b):
    return _p("sub", (_t(a), _t(b)))


def mul(a, b):
    return _p("mul", (_t(a), _t(b)))


def div(a, b):
    return _p("div", (_t(a), _t(b)))


def neg(a):
    return _p("neg", (_t(a),))


def exp(a):
    return _p("exp", (_t(a),))


def log(a):
    return _p("log", (_t(a),))


def power(a, exponent):
    return _p("power", (_t(a),), {"exponent": exponent})


def sin(a):
    return _p("sin", (_t(a),))


def cos(a):
    return _p("cos", (_t(a),))


def sigmoid(a):
    return _p("sigmoid", (_t(a),))


def relu(a):
    return _p("relu", (_t(a),))


def clamp(a, lo, hi):
    return _p("clamp", (_t(a),), {"lo": lo, "hi": hi})


def minimum(a, b):
    return _p("minimum", (_t(a), _t(b)))


def maximum(a, b):
    return _p("maximum", (_t(a), _t(b)))


def where(cond, a, b):
    return _p("where", (_t(a), _t(b)), {"cond": cond})


def mod(a, m):
    return _p("mod", (_t(a),), {"m": m})


def straight_through(a, fn):
    """Apply ``fn`` (numpy -> numpy) in the forward pass; identity in the backward pass."""
    return _p("straight_through", (_t(a),), {"fn": fn})


def matmul(a, b):
    return _p("matmul", (_t(a), _t(b)))


def conv2d(x, w, b=None):
    inputs = (_t(x), _t(w)) if b is None else (_t(x), _t(w), _t(b))
    return _p("conv2d", inputs)


def maxpool2(x):
    return _p("maxpool2", (_t(x),))


def sum(a, axis=None, keepdims=False):  # noqa: A001
    return _p("sum", (_t(a),), {"axis": axis, "keepdims": keepdims})


def mean(a, axis=None, keepdims=False):
    return _p("mean", (_t(a),), {"axis": axis, "keepdims": keepdims})


def amax(a, axis, keepdims=False):
    return _p("max", (_t(a),), {"axis": axis, "keepdims": keepdims})


def amin(a, axis, keepdims=False):
    return _p("min", (_t(a),), {"axis": axis, "keepdims": keepdims})


def softmax(a):
    return _p("softmax", (_t(a),))


def log_softmax(a):
    return _p("log_softmax", (_t(a),))


def l2_normalize(a, eps=1e-12):
    return _p("l2_normalize", (_t(a),), {"eps": eps})


def concat(tensors, axis=0):
    return _p("concat", tuple(_t(t) for t in tensors), {"axis": axis})


def reshape(a, shape):
    return _p("reshape", (_t(a),), {"shape": tuple(shape)})


def transpose(a, axes):
    return _p("transpose", (_t(a),), {"axes": tuple(axes)})


def gather(a, index):
    """Index ``a`` with numpy indexing rules (slices, ints, or index arrays)."""
    return _p("gather", (_t(a),), {"index": index})


def grid_sample(img, grid):
    return _p("grid_sample", (_t(img), _t(grid)))


Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = neg
Tensor.__pow__ = power
Tensor.__matmul__ = matmul
Tensor.__getitem__ = gather
Tensor.sum = sum
Tensor.mean = mean
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
Tensor.exp = exp
Tensor.log = log
Tensor.relu = relu

__all__ = [
    "add", "sub", "mul", "div", "neg", "exp", "log", "power", "sin", "cos", "sigmoid", "relu",
    "clamp", "minimum", "maximum", "where", "mod", "straight_through", "matmul", "conv2d",
    "maxpool2", "sum", "mean", "amax", "amin", "softmax", "log_softmax", "l2_normalize",
    "concat", "reshape", "transpose", "gather", "grid_sample", "as_tensor",
]
