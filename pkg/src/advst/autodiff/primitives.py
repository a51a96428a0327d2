"""Registry of differentiable primitives.

Each primitive is a ``forward(*arrays, **attrs) -> (out, ctx)`` function and a
``backward(ctx, grad_out, needs) -> tuple of input grads`` function. The graph
looks the backward rule up by name at backward time, so a rule can be swapped
(tests use this to inject faults).
"""

import numpy as np

from .. import _kernels
from ..errors import ContractViolation, DomainError
from .tensor import Tensor, active_graph


class Primitive:
    __slots__ = ("name", "forward", "backward")

    def __init__(self, name, forward, backward):
        self.name = name
        self.forward = forward
        self.backward = backward


PRIMITIVES = {}


def register(name, forward, backward):
    PRIMITIVES[name] = Primitive(name, forward, backward)


def primitive_forward(kind, inputs, attrs=None):
    """Evaluate primitive ``kind`` on ``inputs`` and record it on the active graph."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise ContractViolation(f"unknown primitive {kind!r}") from None
    inputs = tuple(inputs)
    out_data, ctx = prim.forward(*(t.data for t in inputs), **(attrs or {}))
    out = Tensor(out_data, dtype=out_data.dtype)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        graph.record(out, kind, inputs, ctx)
    return out


def _shape_error(name, *arrays):
    shapes = ", ".join(str(a.shape) for a in arrays)
    return ContractViolation(f"{name}: incompatible shapes {shapes}")


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(name, fn):
    def forward(a, b):
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise _shape_error(name, a, b) from None
        return fn(a, b), (a, b)
    return forward


# elementwise arithmetic ----------------------------------------------------

register("add", _binary("add", np.add),
         lambda ctx, g, needs: (unbroadcast(g, ctx[0].shape) if needs[0] else None,
                                unbroadcast(g, ctx[1].shape) if needs[1] else None))

register("sub", _binary("sub", np.subtract),
         lambda ctx, g, needs: (unbroadcast(g, ctx[0].shape) if needs[0] else None,
                                unbroadcast(-g, ctx[1].shape) if needs[1] else None))

register("mul", _binary("mul", np.multiply),
         lambda ctx, g, needs: (unbroadcast(g * ctx[1], ctx[0].shape) if needs[0] else None,
                                unbroadcast(g * ctx[0], ctx[1].shape) if needs[1] else None))


def _div_forward(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error("div", a, b) from None
    if np.any(b == 0):
        raise DomainError("div: division by zero")
    out = a / b
    return out, (a, b, out)


def _div_backward(ctx, g, needs):
    a, b, out = ctx
    ga = unbroadcast(g / b, a.shape) if needs[0] else None
    # via the quotient: b * b underflows for tiny b
    gb = unbroadcast(-(g * out) / b, b.shape) if needs[1] else None
    return ga, gb


register("div", _div_forward, _div_backward)

register("neg", lambda a: (-a, None), lambda ctx, g, needs: (-g,))


def _exp_forward(a):
    out = np.exp(a)
    return out, out


register("exp", _exp_forward, lambda out, g, needs: (g * out,))


def _log_forward(a):
    if np.any(a <= 0):
        raise DomainError("log: non-positive operand")
    return np.log(a), a


register("log", _log_forward, lambda a, g, needs: (g / a,))


def _power_forward(a, exponent):
    exponent = float(exponent)
    if not exponent.is_integer() and np.any(a < 0):
        raise DomainError(f"power: negative base with non-integer exponent {exponent}")
    if exponent < 0 and np.any(a == 0):
        raise DomainError("power: zero base with negative exponent")
    return np.power(a, exponent).astype(a.dtype, copy=False), (a, exponent)


def _power_backward(ctx, g, needs):
    a, p = ctx
    if p == 0:
        return (np.zeros_like(a),)
    return (g * p * np.power(a, p - 1),)


register("power", _power_forward, _power_backward)


def _sin_forward(a):
    return np.sin(a), a


register("sin", _sin_forward, lambda a, g, needs: (g * np.cos(a),))
register("cos", lambda a: (np.cos(a), a), lambda a, g, needs: (-g * np.sin(a),))


def _sigmoid_forward(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out, out


register("sigmoid", _sigmoid_forward, lambda out, g, needs: (g * out * (1.0 - out),))


def _relu_forward(a):
    mask = a > 0
    return a * mask, mask


register("relu", _relu_forward, lambda mask, g, needs: (g * mask,))


def _clamp_forward(a, lo, hi):
    inside = (a >= lo) & (a <= hi)
    return np.clip(a, lo, hi), inside


register("clamp", _clamp_forward, lambda inside, g, needs: (g * inside,))


def _minmax(name, pick_first):
    def forward(a, b):
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise _shape_error(name, a, b) from None
        first = pick_first(a, b)
        return np.where(first, a, b), (a.shape, b.shape, first)

    def backward(ctx, g, needs):
        sa, sb, first = ctx
        ga = unbroadcast(g * first, sa) if needs[0] else None
        gb = unbroadcast(g * ~first, sb) if needs[1] else None
        return ga, gb

    register(name, forward, backward)


_minmax("minimum", lambda a, b: a <= b)
_minmax("maximum", lambda a, b: a >= b)


def _where_forward(a, b, cond):
    cond = np.asarray(cond, dtype=bool)
    try:
        np.broadcast_shapes(cond.shape, a.shape, b.shape)
    except ValueError:
        raise ContractViolation(
            f"where: incompatible shapes {cond.shape}, {a.shape}, {b.shape}") from None
    return np.where(cond, a, b), (a.shape, b.shape, cond)


def _where_backward(ctx, g, needs):
    sa, sb, cond = ctx
    ga = unbroadcast(np.where(cond, g, 0), sa) if needs[0] else None
    gb = unbroadcast(np.where(cond, 0, g), sb) if needs[1] else None
    return ga, gb


register("where", _where_forward, _where_backward)

# floor-mod by a constant has slope 1 away from the wrap points
register("mod", lambda a, m: (np.mod(a, m), None), lambda ctx, g, needs: (g,))


def _straight_through_forward(a, fn):
    return np.asarray(fn(a), dtype=a.dtype), None


register("straight_through", _straight_through_forward, lambda ctx, g, needs: (g,))

# linear algebra ------------------------------------------------------------


def _matmul_forward(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    return a @ b, (a, b)


def _matmul_backward(ctx, g, needs):
    a, b = ctx
    return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


register("matmul", _matmul_forward, _matmul_backward)


def _conv2d_forward(x, w, b=None):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise _shape_error("conv2d", x, w)
    k = w.shape[2]
    B, C, H, W = x.shape
    if H < k or W < k:
        raise _shape_error("conv2d", x, w)
    if b is not None and b.shape != (w.shape[0],):
        raise _shape_error("conv2d", x, w, b)
    oh, ow = H - k + 1, W - k + 1
    cols = _kernels.im2col(x, k)
    wmat = w.reshape(w.shape[0], -1)
    out = cols @ wmat.T
    if b is not None:
        out += b
    out = np.ascontiguousarray(out.reshape(B, oh, ow, -1).transpose(0, 3, 1, 2))
    return out, (x.shape, cols, w, b is not None)


def _conv2d_backward(ctx, g, needs):
    x_shape, cols, w, has_bias = ctx
    O = w.shape[0]
    gt = g.transpose(0, 2, 3, 1).reshape(-1, O)
    gx = gw = gb = None
    if needs[0]:
        gx = _kernels.col2im(gt @ w.reshape(O, -1), x_shape, w.shape[2])
    if needs[1]:
        gw = (gt.T @ cols).reshape(w.shape)
    if has_bias and needs[2]:
        gb = gt.sum(axis=0)
    return (gx, gw, gb) if has_bias else (gx, gw)


register("conv2d", _conv2d_forward, _conv2d_backward)


def _maxpool_forward(x):
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ContractViolation(f"maxpool2: need (B,C,H,W) with even H,W, got {x.shape}")
    out, idx = _kernels.maxpool2_forward(np.ascontiguousarray(x))
    return out, (idx, x.shape)


register("maxpool2", _maxpool_forward,
         lambda ctx, g, needs: (_kernels.maxpool2_backward(np.ascontiguousarray(g), ctx[0], ctx[1]),))

# reductions ----------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand_back(g, shape, axes, keepdims):
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _sum_forward(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    return np.asarray(a.sum(axis=axes, keepdims=keepdims)), (a.shape, axes, keepdims)


register("sum", _sum_forward, lambda ctx, g, needs: (_expand_back(g, *ctx),))


def _mean_forward(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return np.asarray(a.mean(axis=axes, keepdims=keepdims)), (a.shape, axes, keepdims, count)


def _mean_backward(ctx, g, needs):
    shape, axes, keepdims, count = ctx
    return (_expand_back(g / count, shape, axes, keepdims),)


register("mean", _mean_forward, _mean_backward)


def _extreme(name, arg):
    def forward(a, axis, keepdims=False):
        axis = axis % a.ndim
        idx = arg(a, axis=axis)
        out = np.take_along_axis(a, np.expand_dims(idx, axis), axis=axis)
        if not keepdims:
            out = np.squeeze(out, axis)
        return out, (a.shape, axis, idx, keepdims)

    def backward(ctx, g, needs):
        shape, axis, idx, keepdims = ctx
        if keepdims:
            g = np.squeeze(g, axis)
        out = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    register(name, forward, backward)


_extreme("max", np.argmax)
_extreme("min", np.argmin)


def _softmax(a):
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_forward(a):
    out = _softmax(a)
    return out, out


def _softmax_backward(out, g, needs):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


register("softmax", _softmax_forward, _softmax_backward)


def _log_softmax_forward(a):
    z = a - a.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return out, out


def _log_softmax_backward(out, g, needs):
    return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


register("log_softmax", _log_softmax_forward, _log_softmax_backward)


def _l2n_forward(a, eps=1e-12):
    norm = np.sqrt((a * a).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, eps)
    out = a / norm
    return out, (out, norm)


def _l2n_backward(ctx, g, needs):
    out, norm = ctx
    return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm,)


register("l2_normalize", _l2n_forward, _l2n_backward)

# structure -----------------------------------------------------------------


def _concat_forward(*arrays, axis=0):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise _shape_error("concat", *arrays) from None
    sizes = [a.shape[axis] for a in arrays]
    return out, (axis, np.cumsum(sizes)[:-1])


def _concat_backward(ctx, g, needs):
    axis, splits = ctx
    return tuple(np.split(g, splits, axis=axis))


register("concat", _concat_forward, _concat_backward)


def _reshape_forward(a, shape):
    try:
        return a.reshape(shape), a.shape
    except ValueError:
        raise ContractViolation(f"reshape: cannot reshape {a.shape} to {shape}") from None


register("reshape", _reshape_forward, lambda shape, g, needs: (g.reshape(shape),))


def _transpose_forward(a, axes):
    return a.transpose(axes), np.argsort(axes)


register("transpose", _transpose_forward, lambda inv, g, needs: (g.transpose(inv),))


def _is_fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def _getitem_forward(a, index):
    try:
        out = a[index]
    except IndexError as exc:
        raise ContractViolation(f"gather: {exc} for shape {a.shape}") from None
    return np.array(out, copy=True), (a.shape, a.dtype, index)


def _getitem_backward(ctx, g, needs):
    shape, dtype, index = ctx
    out = np.zeros(shape, dtype=dtype)
    if _is_fancy(index):
        np.add.at(out, index, g)
    else:
        out[index] = g
    return (out,)


register("gather", _getitem_forward, _getitem_backward)


def _grid_sample_forward(img, grid):
    if img.ndim != 4 or grid.ndim != 4 or grid.shape[-1] != 2 or grid.shape[0] not in (1, img.shape[0]):
        raise _shape_error("grid_sample", img, grid)
    B = img.shape[0]
    full = np.ascontiguousarray(np.broadcast_to(grid, (B,) + grid.shape[1:]))
    img = np.ascontiguousarray(img)
    return _kernels.grid_sample_forward(img, full), (img, full, grid.shape[0])


def _grid_sample_backward(ctx, g, needs):
    img, grid, grid_batch = ctx
    gimg, ggrid = _kernels.grid_sample_backward(np.ascontiguousarray(g), img, grid, needs[0], needs[1])
    if ggrid is not None and grid_batch == 1 and img.shape[0] != 1:
        ggrid = ggrid.sum(axis=0, keepdims=True)
    return gimg, ggrid


register("grid_sample", _grid_sample_forward, _grid_sample_backward)
