"""Netpbm writers for sample previews."""

import numpy as np

from .errors import ContractViolation


def to_uint8(images):
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def tile(images, columns=10, pad=2):
    """Arrange (N, C, H, W) images in [0, 1] into one (C, H', W') canvas, row-major."""
    images = np.asarray(images)
    if images.ndim != 4 or len(images) == 0:
        raise ContractViolation(f"tile: expected a nonempty (N, C, H, W) array, got {images.shape}")
    n, c, h, w = images.shape
    columns = max(1, min(columns, n))
    rows = -(-n // columns)
    canvas = np.ones((c, rows * (h + pad) + pad, columns * (w + pad) + pad), dtype=images.dtype)
    for i, img in enumerate(images):
        r, col = divmod(i, columns)
        y, x = pad + r * (h + pad), pad + col * (w + pad)
        canvas[:, y:y + h, x:x + w] = img
    return canvas


def write_netpbm(path, image):
    """(H, W) or (1, H, W) -> binary PGM; (3, H, W) -> binary PPM. Values in [0, 1]."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    if image.ndim == 2:
        magic, pixels = b"P5", to_uint8(image)
    elif image.ndim == 3 and image.shape[0] == 3:
        magic, pixels = b"P6", to_uint8(image.transpose(1, 2, 0))
    else:
        raise ContractViolation(f"write_netpbm: unsupported shape {image.shape}")
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def luminance(images):
    images = np.asarray(images)
    weights = np.array([0.299, 0.587, 0.114], dtype=images.dtype).reshape(1, 3, 1, 1)
    return (images * weights).sum(axis=1, keepdims=True)


def write_grid(path, images, columns=10):
    """Tile and write. A ``.pgm`` path stores luminance, anything else stores RGB."""
    if str(path).lower().endswith(".pgm"):
        images = luminance(images)
    write_netpbm(path, tile(images, columns))


def read_netpbm(path):
    """Inverse of :func:`write_netpbm` for the files it writes; returns uint8 (H, W) or (H, W, 3)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(blob, dtype=np.uint8, offset=pos, count=w * h * channels)
    return data.reshape((h, w, 3) if channels == 3 else (h, w))
