"""Parameterized, differentiable image augmentations and their random composition.

Every op maps a batch ``B x 3 x H x W`` with values in [0, 1] to a batch of the
same shape, clamped to [0, 1]. Learnable magnitudes are passed as a Tensor so
gradients flow back to them.
"""

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation


class BaseOpKind(enum.Enum):
    HSV = "hsv"
    CONTRAST = "contrast"
    INVERT = "invert"
    SHARPNESS = "sharpness"
    SHEAR = "shear"
    TRANSLATE = "translate"
    ROTATE = "rotate"
    SCALE = "scale"
    SOLARIZE = "solarize"
    EQUALIZE = "equalize"
    POSTERIZE = "posterize"
    CUTOUT = "cutout"


@dataclass(frozen=True)
class OpInfo:
    n_params: int
    differentiable: bool
    neutral: tuple = ()
    lo: tuple = ()
    hi: tuple = ()
    wraps: tuple = ()

    @property
    def learnable(self):
        return self.n_params > 0

    def widths(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))


_ROT = math.pi / 6

OP_INFO = {
    BaseOpKind.HSV: OpInfo(3, True, (0.0, 0.0, 0.0), (-0.5, -0.5, -0.5), (0.5, 0.5, 0.5), (True, False, False)),
    BaseOpKind.CONTRAST: OpInfo(1, True, (1.0,), (0.25,), (4.0,), (False,)),
    # the sigmoid mask needs the threshold ~12/50 above 1 to leave white pixels untouched
    BaseOpKind.INVERT: OpInfo(1, True, (1.25,), (0.0,), (1.25,), (False,)),
    BaseOpKind.SHARPNESS: OpInfo(1, True, (0.0,), (-1.0,), (3.0,), (False,)),
    BaseOpKind.SHEAR: OpInfo(2, True, (0.0, 0.0), (-0.3, -0.3), (0.3, 0.3), (False, False)),
    BaseOpKind.TRANSLATE: OpInfo(2, True, (0.0, 0.0), (-0.3, -0.3), (0.3, 0.3), (False, False)),
    BaseOpKind.ROTATE: OpInfo(1, True, (0.0,), (-_ROT,), (_ROT,), (False,)),
    BaseOpKind.SCALE: OpInfo(1, True, (1.0,), (0.5,), (2.0,), (False,)),
    BaseOpKind.SOLARIZE: OpInfo(1, True, (0.0,), (0.0,), (1.0,), (False,)),
    BaseOpKind.EQUALIZE: OpInfo(0, False),
    BaseOpKind.POSTERIZE: OpInfo(0, False),
    BaseOpKind.CUTOUT: OpInfo(0, False),
}

ALL_OPS = tuple(BaseOpKind)
GEOMETRIC = frozenset({BaseOpKind.SHEAR, BaseOpKind.TRANSLATE, BaseOpKind.ROTATE, BaseOpKind.SCALE})
INVERT_STEEPNESS = 50.0


@dataclass(frozen=True)
class TransformChain:
    ops: tuple

    def __post_init__(self):
        ops = tuple(BaseOpKind(o) for o in self.ops)
        object.__setattr__(self, "ops", ops)
        if not ops:
            raise ContractViolation("a transform chain needs at least one op")
        if len(set(ops)) != len(ops):
            raise ContractViolation(f"duplicate ops in chain {[o.value for o in ops]}")

    @property
    def length(self):
        return len(self.ops)

    def __str__(self):
        return "+".join(o.value for o in self.ops)


@dataclass(frozen=True)
class TransformParams:
    """Learnable values (one array per op in the chain) plus frozen random attributes."""

    values: tuple
    frozen: tuple = field(default=())

    def with_values(self, values):
        return TransformParams(tuple(np.asarray(v) for v in values), self.frozen)


class ChainDistribution:
    """Uniform length in 1..l_max, then a uniform ordered chain of distinct ops."""

    def __init__(self, ops=ALL_OPS, l_max=3):
        self.ops = tuple(BaseOpKind(o) for o in ops)
        if len(set(self.ops)) != len(self.ops):
            raise ContractViolation("base op set contains duplicates")
        if not 1 <= l_max <= len(self.ops):
            raise ContractViolation(f"l_max must be in 1..{len(self.ops)}, got {l_max}")
        self.l_max = l_max
        self.counts = {L: math.perm(len(self.ops), L) for L in range(1, l_max + 1)}

    @property
    def total(self):
        return sum(self.counts.values())

    def validate(self, chain):
        if chain.length > self.l_max:
            raise ContractViolation(f"chain length {chain.length} exceeds l_max={self.l_max}")
        unknown = [o for o in chain.ops if o not in self.ops]
        if unknown:
            raise ContractViolation(f"ops {unknown} not in the base op set")

    def sample(self, rng):
        L = int(rng.integers(1, self.l_max + 1))
        picks = rng.choice(len(self.ops), size=L, replace=False)
        return TransformChain(tuple(self.ops[i] for i in picks))


def chain_probability(chain, dist):
    """G(chain) = 1 / (M_L * l_max)."""
    if not isinstance(chain, TransformChain):
        chain = TransformChain(tuple(chain))
    dist.validate(chain)
    return 1.0 / (dist.counts[chain.length] * dist.l_max)


def sample_chain(dist, rng):
    return dist.sample(rng)


def init_params(chain, rng):
    """Neutral value plus uniform noise of 10% of the interval width, then clamped.

    Posterize bits and the Cutout square are drawn once here and stay fixed.
    """
    values, frozen = [], []
    for op in chain.ops:
        info = OP_INFO[op]
        if info.learnable:
            width = np.array(info.widths())
            v = np.array(info.neutral) + rng.uniform(-0.1, 0.1, size=info.n_params) * width
            values.append(np.clip(v, info.lo, info.hi))
        else:
            values.append(np.zeros(0))
        if op is BaseOpKind.POSTERIZE:
            frozen.append(MappingProxyType({"bits": int(rng.integers(3, 9))}))
        elif op is BaseOpKind.CUTOUT:
            frozen.append(MappingProxyType({
                "side": float(rng.uniform(0.1, 0.4)),
                "center": (float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0))),
            }))
        else:
            frozen.append(MappingProxyType({}))
    return TransformParams(tuple(values), tuple(frozen))


def clamp_params(chain, params):
    """Project every learnable value onto its interval; the hue delta wraps instead."""
    out = []
    for op, v in zip(chain.ops, params.values):
        info = OP_INFO[op]
        v = np.array(v, dtype=np.float64, copy=True)
        for i in range(info.n_params):
            if info.wraps[i]:
                if not info.lo[i] <= v[i] <= info.hi[i]:
                    v[i] = (v[i] + 0.5) % 1.0 - 0.5
            else:
                v[i] = min(max(v[i], info.lo[i]), info.hi[i])
        out.append(v)
    return params.with_values(out)


# -- individual ops -----------------------------------------------------------


def _check_images(images):
    d = images.data
    if d.ndim != 4 or d.shape[1] != 3:
        raise ContractViolation(f"expected images of shape (B, 3, H, W), got {d.shape}")
    if d.size and (d.min() < -1e-6 or d.max() > 1 + 1e-6):
        raise ContractViolation(f"image values outside [0, 1]: [{d.min()}, {d.max()}]")


def _check_params(kind, values):
    info = OP_INFO[kind]
    if values.shape != (info.n_params,):
        raise ContractViolation(f"{kind.value}: expected {info.n_params} params, got shape {values.shape}")
    for i in range(info.n_params):
        tol = 1e-6 * max(1.0, abs(info.lo[i]), abs(info.hi[i]))
        if not info.lo[i] - tol <= values[i] <= info.hi[i] + tol:
            raise ContractViolation(
                f"{kind.value}: param {i} = {values[i]} outside [{info.lo[i]}, {info.hi[i]}]")


def rgb_to_hsv(images):
    """Differentiable RGB -> (h, s, v), each (B, H, W); hue in [0, 1)."""
    r, g, b = images[:, 0], images[:, 1], images[:, 2]
    v = ad.amax(images, axis=1)
    delta = v - ad.amin(images, axis=1)
    vpos = v.data > 0
    s = ad.where(vpos, delta / ad.where(vpos, v, 1.0), 0.0)
    dpos = delta.data > 0
    dsafe = ad.where(dpos, delta, 1.0)
    top = np.argmax(images.data, axis=1)
    hr = ad.mod((g - b) / dsafe, 6.0)
    hg = (b - r) / dsafe + 2.0
    hb = (r - g) / dsafe + 4.0
    h = ad.where(top == 0, hr, ad.where(top == 1, hg, hb))
    h = ad.where(dpos, h, 0.0) / 6.0
    return h, s, v


def hsv_to_rgb(h, s, v):
    channels = []
    for n in (5.0, 3.0, 1.0):
        k = ad.mod(h * 6.0 + n, 6.0)
        ramp = ad.clamp(ad.minimum(k, 4.0 - k), 0.0, 1.0)
        c = v - v * s * ramp
        channels.append(ad.reshape(c, (c.shape[0], 1) + c.shape[1:]))
    return ad.concat(channels, axis=1)


def _hsv(images, p):
    h, s, v = rgb_to_hsv(images)
    h = ad.mod(h + p[0], 1.0)
    s = ad.clamp(s + p[1], 0.0, 1.0)
    v = ad.clamp(v + p[2], 0.0, 1.0)
    return hsv_to_rgb(h, s, v)


def _contrast(images, p):
    m = ad.mean(images, axis=(1, 2, 3), keepdims=True)
    return (images - m) * p[0] + m


def _invert(images, p):
    mask = ad.sigmoid((images - p[0]) * INVERT_STEEPNESS)
    return images + mask * (1.0 - images * 2.0)


def _reflect_index(n):
    return np.concatenate(([1], np.arange(n), [n - 2]))


def blur3(images):
    """Separable (1, 2, 1)/4 blur with reflect padding."""
    H, W = images.shape[2], images.shape[3]
    xp = images[:, :, :, _reflect_index(W)]
    hblur = (xp[:, :, :, :-2] + xp[:, :, :, 1:-1] * 2.0 + xp[:, :, :, 2:]) * 0.25
    yp = hblur[:, :, _reflect_index(H), :]
    return (yp[:, :, :-2, :] + yp[:, :, 1:-1, :] * 2.0 + yp[:, :, 2:, :]) * 0.25


def _sharpness(images, p):
    return images + (images - blur3(images)) * p[0]


def _base_grid(H, W, dtype):
    ys, xs = np.meshgrid(np.linspace(-1.0, 1.0, H), np.linspace(-1.0, 1.0, W), indexing="ij")
    return np.stack([xs.ravel(), ys.ravel(), np.ones(H * W)], axis=1).astype(dtype)


def _entry(x):
    if isinstance(x, Tensor):
        return ad.reshape(x, (1,))
    return Tensor(np.array([x]))


def _affine_matrix(kind, p):
    """3x2 matrix M with sample_coords = [x_out, y_out, 1] @ M (normalized coordinates)."""
    if kind is BaseOpKind.ROTATE:
        c, s = ad.cos(p[0]), ad.sin(p[0])
        entries = [c, s, -s, c, 0.0, 0.0]
    elif kind is BaseOpKind.SHEAR:
        entries = [1.0, p[1], p[0], 1.0, 0.0, 0.0]
    elif kind is BaseOpKind.TRANSLATE:
        entries = [1.0, 0.0, 0.0, 1.0, p[0] * -2.0, p[1] * -2.0]
    else:  # SCALE
        inv = 1.0 / p[0]
        entries = [inv, 0.0, 0.0, inv, 0.0, 0.0]
    return ad.reshape(ad.concat([_entry(e) for e in entries]), (3, 2))


def affine_warp(images, matrix):
    """Warp with a 3x2 inverse map; bilinear sampling, zeros outside the image."""
    B, C, H, W = images.shape
    base = Tensor(_base_grid(H, W, images.dtype), dtype=images.dtype)
    grid = ad.reshape(base @ matrix, (1, H, W, 2))
    return ad.grid_sample(images, grid)


def _geometric(kind):
    return lambda images, p: affine_warp(images, _affine_matrix(kind, p))


def _solarize(images, p):
    return images + (1.0 - images * 2.0) * p[0]


def equalize_np(x):
    """Per-image, per-channel 256-bin histogram equalization of values in [0, 1]."""
    q = np.clip(np.rint(x * 255.0), 0, 255).astype(np.int64)
    out = np.empty_like(x)
    B, C = x.shape[:2]
    for b in range(B):
        for c in range(C):
            ch = q[b, c]
            hist = np.bincount(ch.ravel(), minlength=256)
            nonzero = hist[hist > 0]
            step = (nonzero.sum() - nonzero[-1]) // 255
            if step == 0:
                out[b, c] = ch / 255.0
                continue
            lut = (np.cumsum(hist) - hist + step // 2) // step
            out[b, c] = np.clip(lut, 0, 255)[ch] / 255.0
    return out


def posterize_np(x, bits):
    q = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    return (q & mask) / 255.0


def cutout_mask(shape, side, center):
    H, W = shape
    half = side * min(H, W) / 2.0
    cy, cx = center[1] * (H - 1), center[0] * (W - 1)
    ys = np.arange(H)[:, None]
    xs = np.arange(W)[None, :]
    inside = (np.abs(ys - cy) <= half) & (np.abs(xs - cx) <= half)
    return (~inside).astype(np.float64)


_APPLY = {
    BaseOpKind.HSV: _hsv,
    BaseOpKind.CONTRAST: _contrast,
    BaseOpKind.INVERT: _invert,
    BaseOpKind.SHARPNESS: _sharpness,
    BaseOpKind.SHEAR: _geometric(BaseOpKind.SHEAR),
    BaseOpKind.TRANSLATE: _geometric(BaseOpKind.TRANSLATE),
    BaseOpKind.ROTATE: _geometric(BaseOpKind.ROTATE),
    BaseOpKind.SCALE: _geometric(BaseOpKind.SCALE),
    BaseOpKind.SOLARIZE: _solarize,
}


def apply_base(kind, params, images, frozen=None):
    """Apply one op. ``params`` is a Tensor or array of the op's learnable values."""
    kind = BaseOpKind(kind)
    images = ad.as_tensor(images)
    _check_images(images)
    frozen = frozen or {}
    if kind is BaseOpKind.EQUALIZE:
        out = ad.straight_through(images, equalize_np)
    elif kind is BaseOpKind.POSTERIZE:
        bits = int(frozen.get("bits", 8))
        out = ad.straight_through(images, lambda x: posterize_np(x, bits))
    elif kind is BaseOpKind.CUTOUT:
        mask = cutout_mask(images.shape[2:], frozen.get("side", 0.25), frozen.get("center", (0.5, 0.5)))
        out = images * mask
    else:
        p = params if isinstance(params, Tensor) else Tensor(np.asarray(params, dtype=np.float64))
        _check_params(kind, np.asarray(p.data, dtype=np.float64))
        out = _APPLY[kind](images, p)
    return ad.clamp(out, 0.0, 1.0)


def apply_chain(chain, params, images):
    """Apply the ops of ``chain`` in order. ``params.values`` entries may be Tensors."""
    if len(params.values) != chain.length:
        raise ContractViolation(f"{len(params.values)} param groups for a chain of length {chain.length}")
    out = images
    frozen = params.frozen or ({},) * chain.length
    for op, values, attrs in zip(chain.ops, params.values, frozen):
        out = apply_base(op, values, out, attrs)
    return out


def neutral_params(chain):
    values = [np.array(OP_INFO[op].neutral, dtype=np.float64) for op in chain.ops]
    frozen = []
    for op in chain.ops:
        if op is BaseOpKind.POSTERIZE:
            frozen.append(MappingProxyType({"bits": 8}))
        else:
            frozen.append(MappingProxyType({}))
    return TransformParams(tuple(values), tuple(frozen))
