"""Pure-numpy implementations of the hot kernels.

These are the fallback when the compiled extension is unavailable, and the
reference the compiled kernels are tested against.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k):
    """(B, C, H, W) -> (B*OH*OW, C*k*k) patch matrix for a valid, stride-1 conv."""
    B, C, H, W = x.shape
    oh, ow = H - k + 1, W - k + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # B, C, oh, ow, k, k
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * oh * ow, C * k * k)


def col2im(cols, x_shape, k):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back onto the image."""
    B, C, H, W = x_shape
    oh, ow = H - k + 1, W - k + 1
    gc = cols.reshape(B, oh, ow, C, k, k).transpose(0, 3, 4, 5, 1, 2)  # B, C, k, k, oh, ow
    out = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + oh, j:j + ow] += gc[:, :, i, j]
    return out


def maxpool2_forward(x):
    """2x2 max-pool, stride 2. Returns (out, argmax) with argmax in 0..3 (first max wins)."""
    B, C, H, W = x.shape
    win = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.uint8)


def maxpool2_backward(g, idx, x_shape):
    B, C, H, W = x_shape
    win = np.zeros((B, C, H // 2, W // 2, 4), dtype=g.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    return np.ascontiguousarray(
        win.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape))


def _corners(grid, H, W):
    ix = (grid[..., 0] + 1.0) * (0.5 * (W - 1))
    iy = (grid[..., 1] + 1.0) * (0.5 * (H - 1))
    x0 = np.floor(ix)
    y0 = np.floor(iy)
    wx1 = ix - x0
    wy1 = iy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    return x0, y0, 1.0 - wx1, wx1, 1.0 - wy1, wy1


def _gather(flat_t, x, y, H, W):
    """Values at integer pixel (x, y), zero outside. flat_t is (B, H*W, C)."""
    valid = (x >= 0) & (x < W) & (y >= 0) & (y < H)
    lin = np.where(valid, y * W + x, 0).reshape(x.shape[0], -1)
    b = np.arange(x.shape[0])[:, None]
    vals = flat_t[b, lin]  # B, P, C
    vals = vals * valid.reshape(x.shape[0], -1, 1)
    return vals, valid, lin


def grid_sample_forward(img, grid):
    """Bilinear sampling of img (B,C,H,W) at grid (B,Ho,Wo,2), coordinates in [-1,1].

    Corner pixels map exactly to -1 and +1; samples outside the image read zero.
    """
    B, C, H, W = img.shape
    _, Ho, Wo, _ = grid.shape
    flat_t = img.reshape(B, C, H * W).transpose(0, 2, 1)
    x0, y0, wx0, wx1, wy0, wy1 = _corners(grid, H, W)
    out = np.zeros((B, Ho * Wo, C), dtype=img.dtype)
    for dx, dy, w in ((0, 0, wx0 * wy0), (1, 0, wx1 * wy0), (0, 1, wx0 * wy1), (1, 1, wx1 * wy1)):
        vals, _, _ = _gather(flat_t, x0 + dx, y0 + dy, H, W)
        out += vals * w.reshape(B, -1, 1)
    return np.ascontiguousarray(out.transpose(0, 2, 1).reshape(B, C, Ho, Wo))


def grid_sample_backward(g, img, grid, need_img=True, need_grid=True):
    B, C, H, W = img.shape
    _, Ho, Wo, _ = grid.shape
    P = Ho * Wo
    flat_t = img.reshape(B, C, H * W).transpose(0, 2, 1)
    gt = g.reshape(B, C, P).transpose(0, 2, 1)  # B, P, C
    x0, y0, wx0, wx1, wy0, wy1 = _corners(grid, H, W)
    corners = {}
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        corners[dx, dy] = _gather(flat_t, x0 + dx, y0 + dy, H, W)
    gimg = ggrid = None
    if need_img:
        weights = {(0, 0): wx0 * wy0, (1, 0): wx1 * wy0, (0, 1): wx0 * wy1, (1, 1): wx1 * wy1}
        lin_all = []
        w_all = []
        base = (np.arange(B)[:, None, None] * C + np.arange(C)[None, None, :]) * (H * W)  # B,1,C
        for key, (_, valid, lin) in corners.items():
            w = (weights[key] * valid).reshape(B, P, 1)
            lin_all.append((base + lin[:, :, None]).ravel())
            w_all.append((gt * w).ravel())
        gimg = np.bincount(np.concatenate(lin_all), weights=np.concatenate(w_all), minlength=B * C * H * W)
        gimg = gimg.astype(img.dtype).reshape(B, C, H, W)
    if need_grid:
        v00, v10, v01, v11 = (corners[k][0] for k in ((0, 0), (1, 0), (0, 1), (1, 1)))
        wy0r, wy1r = wy0.reshape(B, P, 1), wy1.reshape(B, P, 1)
        wx0r, wx1r = wx0.reshape(B, P, 1), wx1.reshape(B, P, 1)
        dix = ((v10 - v00) * wy0r + (v11 - v01) * wy1r) * gt
        diy = ((v01 - v00) * wx0r + (v11 - v10) * wx1r) * gt
        ggrid = np.empty((B, Ho, Wo, 2), dtype=img.dtype)
        ggrid[..., 0] = dix.sum(axis=2).reshape(B, Ho, Wo) * (0.5 * (W - 1))
        ggrid[..., 1] = diy.sum(axis=2).reshape(B, Ho, Wo) * (0.5 * (H - 1))
    return gimg, ggrid
