"""Datasets: IDX ingestion, raw array dumps, procedural digits, and shifted target domains."""

from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import load_arrays, save_arrays
from .errors import ContractViolation, FormatError
from .transforms import affine_warp, hsv_to_rgb

IMAGE_SIZE = 32
NUM_CLASSES = 10

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ContractViolation(f"{self.name}: images must be (N, 3, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ContractViolation(f"{self.name}: {len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ContractViolation(f"{self.name}: pixel values outside [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractViolation(f"{self.name}: labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, index, name=None):
        return Dataset(self.images[index], self.labels[index], name or self.name, self.num_classes)

    def split(self, n_first):
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))


# ---------------------------------------------------------------- IDX

def _read_bytes(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _parse_idx(blob, magic, path, limit):
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated magic number", offset=len(blob))
    (found,) = struct.unpack_from(">I", blob, 0)
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    if len(blob) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated dimension header", offset=len(blob))
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    n = dims[0] if limit is None else min(dims[0], limit)
    per = int(np.prod(dims[1:])) if ndim > 1 else 1
    start = 4 + 4 * ndim
    need = start + n * per
    if len(blob) < need:
        raise FormatError(f"{path}: truncated payload, need {need} bytes, have {len(blob)}", offset=len(blob))
    data = np.frombuffer(blob, dtype=np.uint8, count=n * per, offset=start)
    return data.reshape((n,) + tuple(dims[1:])), dims[0]


def to_rgb32(gray_u8):
    """(N, H, W) uint8 with H, W <= 32 -> (N, 3, 32, 32) float in [0, 1], zero-padded and centered."""
    n, h, w = gray_u8.shape
    if h > IMAGE_SIZE or w > IMAGE_SIZE:
        raise ContractViolation(f"images larger than {IMAGE_SIZE}x{IMAGE_SIZE}: {h}x{w}")
    top, left = (IMAGE_SIZE - h) // 2, (IMAGE_SIZE - w) // 2
    out = np.zeros((n, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    out[:, top:top + h, left:left + w] = gray_u8 / np.float32(255)
    return np.repeat(out[:, None], 3, axis=1)


def load_idx(images_path, labels_path, limit=None, name="mnist"):
    """Read an IDX image/label pair, keeping the first ``limit`` records in file order."""
    if limit is not None and limit < 0:
        raise ContractViolation(f"limit must be nonnegative, got {limit}")
    images, n_img = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path, limit)
    labels, n_lab = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path, limit)
    if n_img != n_lab:
        raise FormatError(f"{labels_path}: {n_lab} labels for {n_img} images", offset=4)
    return Dataset(to_rgb32(images), labels.astype(np.int64), name)


def write_idx(path, array):
    """Write a uint8 array as IDX (rank 1 -> labels magic, rank 3 -> images magic)."""
    array = np.asarray(array)
    if array.dtype != np.uint8 or array.ndim not in (1, 3):
        raise ContractViolation(f"IDX writer takes rank-1 or rank-3 uint8 arrays, got {array.dtype} rank {array.ndim}")
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(array).tobytes())


# ---------------------------------------------------------------- raw dumps

def save_raw(path, ds):
    save_arrays(path, {"images": ds.images, "labels": ds.labels.astype(np.float32)})


def load_raw(path, name=None):
    arrays = load_arrays(path)
    if "images" not in arrays or "labels" not in arrays:
        raise ContractViolation(f"{path}: raw dump needs 'images' and 'labels' records")
    labels = arrays["labels"]
    if np.any(labels != np.round(labels)):
        raise ContractViolation(f"{path}: non-integer labels")
    return Dataset(np.clip(arrays["images"], 0, 1), labels.astype(np.int64), name or str(path))


# ---------------------------------------------------------------- procedural digits

def _arc(cx, cy, rx, ry, a0, a1, n=12):
    a = np.radians(np.linspace(a0, a1, n))
    return np.stack([cx + rx * np.cos(a), cy - ry * np.sin(a)], axis=1)


def _line(*pts):
    return np.asarray(pts, dtype=float)


# strokes in a unit box, x right, y down
_TEMPLATES = {
    0: [_arc(0.5, 0.5, 0.32, 0.45, 0, 360, 24)],
    1: [_line((0.35, 0.22), (0.55, 0.05), (0.55, 0.95))],
    2: [np.vstack([_arc(0.5, 0.3, 0.3, 0.25, 160, -30), _line((0.2, 0.95), (0.85, 0.95))])],
    3: [_arc(0.48, 0.28, 0.28, 0.23, 150, -90), _arc(0.48, 0.72, 0.32, 0.23, 90, -150)],
    4: [_line((0.62, 0.95), (0.62, 0.05), (0.15, 0.68), (0.88, 0.68))],
    5: [np.vstack([_line((0.8, 0.05), (0.25, 0.05), (0.22, 0.45)), _arc(0.5, 0.68, 0.32, 0.27, 130, -150)])],
    6: [np.vstack([_arc(0.75, 0.55, 0.5, 0.5, 110, 180, 8), _arc(0.5, 0.7, 0.27, 0.25, 180, -180, 20)])],
    7: [_line((0.15, 0.05), (0.85, 0.05), (0.4, 0.95))],
    8: [_arc(0.5, 0.27, 0.24, 0.22, 0, 360, 18), _arc(0.5, 0.72, 0.3, 0.23, 0, 360, 20)],
    9: [np.vstack([_arc(0.5, 0.3, 0.27, 0.25, 0, 360, 20), _line((0.77, 0.3), (0.7, 0.95))])],
}


def _render(strokes, thickness, size=IMAGE_SIZE):
    yy, xx = np.mgrid[0:size, 0:size].astype(float) + 0.5
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dist = np.full(pix.shape[0], np.inf)
    for pts in strokes:
        a, b = pts[:-1], pts[1:]
        ab = b - a
        denom = np.maximum((ab ** 2).sum(1), 1e-12)
        t = np.clip(((pix[:, None, :] - a[None]) * ab[None]).sum(-1) / denom[None], 0, 1)
        proj = a[None] + t[..., None] * ab[None]
        dist = np.minimum(dist, np.sqrt(((pix[:, None, :] - proj) ** 2).sum(-1)).min(1))
    return np.clip(thickness - dist + 0.5, 0, 1).reshape(size, size)


def synth_digits(n_per_class, rng, name="synth"):
    """Class-balanced procedural glyphs with random affine jitter, interleaved by class."""
    if n_per_class < 1:
        raise ContractViolation(f"need at least one sample per class, got {n_per_class}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = n_per_class * NUM_CLASSES
    labels = np.tile(np.arange(NUM_CLASSES), n_per_class)
    gray = np.empty((n, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    for i, label in enumerate(labels):
        angle = rng.uniform(-0.25, 0.25)
        shear = rng.uniform(-0.2, 0.2)
        sx, sy = rng.uniform(14, 20), rng.uniform(18, 22)
        c, s = np.cos(angle), np.sin(angle)
        mat = np.array([[c, -s], [s, c]]) @ np.array([[sx, shear * sy], [0, sy]])
        offset = np.array([16, 16]) + rng.uniform(-2, 2, size=2)
        strokes = []
        for pts in _TEMPLATES[int(label)]:
            pts = pts + rng.normal(0, 0.025, size=pts.shape)
            strokes.append((pts - 0.5) @ mat.T + offset)
        gray[i] = _render(strokes, rng.uniform(0.8, 1.6))
    images = np.repeat(gray[:, None], 3, axis=1)
    return Dataset(images, labels, name)


# ---------------------------------------------------------------- target-domain shifts

_SHIFT_ARITY = {"invert": 0, "translate": 2, "scale": 1, "colorize": 2, "contrast": 1}
_SHIFT_LIMITS = {
    "translate": [(-0.3, 0.3), (-0.3, 0.3)],
    "scale": [(0.5, 2.0)],
    "colorize": [(0.0, 1.0), (0.0, 1.0)],
    "contrast": [(0.25, 4.0)],
}


@dataclass(frozen=True)
class ShiftOp:
    kind: str
    args: tuple = ()

    def __post_init__(self):
        if self.kind not in _SHIFT_ARITY:
            raise ContractViolation(f"unknown shift {self.kind!r}; choose from {sorted(_SHIFT_ARITY)}")
        if len(self.args) != _SHIFT_ARITY[self.kind]:
            raise ContractViolation(f"{self.kind} takes {_SHIFT_ARITY[self.kind]} arguments, got {len(self.args)}")
        for v, (lo, hi) in zip(self.args, _SHIFT_LIMITS.get(self.kind, [])):
            if not lo <= v <= hi:
                raise ContractViolation(f"{self.kind} argument {v} outside [{lo}, {hi}]")

    def __str__(self):
        return self.kind + (f"({','.join(f'{a:g}' for a in self.args)})" if self.args else "")


@dataclass(frozen=True)
class ShiftSpec:
    ops: tuple = field(default_factory=tuple)

    def __str__(self):
        return "+".join(str(op) for op in self.ops) or "identity"


_TOKEN = re.compile(r"^\s*([a-z]+)\s*(?:\(([^)]*)\))?\s*$")


def parse_shift(text):
    """Parse e.g. ``"invert+translate(0.15,0)"``; empty text or ``identity`` is no shift."""
    text = text.strip()
    if text in ("", "identity"):
        return ShiftSpec()
    ops = []
    for token in text.split("+"):
        match = _TOKEN.match(token)
        if not match:
            raise ContractViolation(f"cannot parse shift {token!r}")
        kind, raw = match.groups()
        try:
            args = tuple(float(a) for a in raw.split(",")) if raw else ()
        except ValueError:
            raise ContractViolation(f"non-numeric argument in shift {token!r}") from None
        ops.append(ShiftOp(kind, args))
    return ShiftSpec(tuple(ops))


def _hue_rgb(h):
    one = ad.Tensor(np.ones((1, 1, 1)), dtype=np.float64)
    with ad.no_graph():
        return hsv_to_rgb(one * h, one, one).data.reshape(3)


def _apply_shift(op, x):
    if op.kind == "invert":
        return 1.0 - x
    if op.kind == "contrast":
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        return np.clip((x - mean) * op.args[0] + mean, 0, 1)
    if op.kind == "colorize":
        lum = x.mean(axis=1, keepdims=True)
        bg = _hue_rgb(op.args[0]).reshape(1, 3, 1, 1)
        fg = _hue_rgb(op.args[1]).reshape(1, 3, 1, 1)
        return (1 - lum) * bg + lum * fg
    if op.kind == "translate":
        mat = np.array([[1, 0], [0, 1], [-2 * op.args[0], -2 * op.args[1]]])
    else:
        s = op.args[0]
        mat = np.array([[1 / s, 0], [0, 1 / s], [0, 0]])
    with ad.no_graph():
        out = affine_warp(ad.Tensor(x, dtype=x.dtype), ad.Tensor(mat, dtype=x.dtype)).data
    return np.clip(out, 0, 1)


def make_target_domain(src, spec, name=None):
    """Apply a fixed sequence of shifts to every image; labels are untouched."""
    if isinstance(spec, str):
        spec = parse_shift(spec)
    x = src.images.copy()
    for op in spec.ops:
        x = _apply_shift(op, x).astype(src.images.dtype)
    return Dataset(x, src.labels.copy(), name or str(spec), src.num_classes)
