# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_reference``. Same signatures, same results."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

ctypedef fused real:
    float
    double


def _im2col(const real[:, :, :, ::1] x, Py_ssize_t k, real[:, ::1] out):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t oh = H - k + 1, ow = W - k + 1
    cdef Py_ssize_t b, y, xx, c, i, j, row, col
    with nogil:
        for b in range(B):
            for y in range(oh):
                for xx in range(ow):
                    row = (b * oh + y) * ow + xx
                    col = 0
                    for c in range(C):
                        for i in range(k):
                            for j in range(k):
                                out[row, col] = x[b, c, y + i, xx + j]
                                col = col + 1


def im2col(x, Py_ssize_t k):
    x = np.ascontiguousarray(x)
    B, C, H, W = x.shape
    out = np.empty((B * (H - k + 1) * (W - k + 1), C * k * k), dtype=x.dtype)
    _im2col(x, k, out)
    return out


def _col2im(const real[:, ::1] cols, Py_ssize_t k, real[:, :, :, ::1] out):
    cdef Py_ssize_t B = out.shape[0], C = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t oh = H - k + 1, ow = W - k + 1
    cdef Py_ssize_t b, y, xx, c, i, j, row, col
    with nogil:
        for b in range(B):
            for y in range(oh):
                for xx in range(ow):
                    row = (b * oh + y) * ow + xx
                    col = 0
                    for c in range(C):
                        for i in range(k):
                            for j in range(k):
                                out[b, c, y + i, xx + j] += cols[row, col]
                                col = col + 1


def col2im(cols, x_shape, Py_ssize_t k):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(x_shape, dtype=cols.dtype)
    _col2im(cols, k, out)
    return out


def _maxpool_fwd(const real[:, :, :, ::1] x, real[:, :, :, ::1] out, cnp.uint8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t B = out.shape[0], C = out.shape[1], H2 = out.shape[2], W2 = out.shape[3]
    cdef Py_ssize_t b, c, y, xx, best_i
    cdef real best, v
    with nogil:
        for b in range(B):
            for c in range(C):
                for y in range(H2):
                    for xx in range(W2):
                        best = x[b, c, 2 * y, 2 * xx]
                        best_i = 0
                        v = x[b, c, 2 * y, 2 * xx + 1]
                        if v > best:
                            best = v
                            best_i = 1
                        v = x[b, c, 2 * y + 1, 2 * xx]
                        if v > best:
                            best = v
                            best_i = 2
                        v = x[b, c, 2 * y + 1, 2 * xx + 1]
                        if v > best:
                            best = v
                            best_i = 3
                        out[b, c, y, xx] = best
                        idx[b, c, y, xx] = <cnp.uint8_t>best_i


def maxpool2_forward(x):
    x = np.ascontiguousarray(x)
    B, C, H, W = x.shape
    out = np.empty((B, C, H // 2, W // 2), dtype=x.dtype)
    idx = np.empty((B, C, H // 2, W // 2), dtype=np.uint8)
    _maxpool_fwd(x, out, idx)
    return out, idx


def _maxpool_bwd(const real[:, :, :, ::1] g, const cnp.uint8_t[:, :, :, ::1] idx, real[:, :, :, ::1] out):
    cdef Py_ssize_t B = g.shape[0], C = g.shape[1], H2 = g.shape[2], W2 = g.shape[3]
    cdef Py_ssize_t b, c, y, xx, i
    with nogil:
        for b in range(B):
            for c in range(C):
                for y in range(H2):
                    for xx in range(W2):
                        i = idx[b, c, y, xx]
                        out[b, c, 2 * y + i // 2, 2 * xx + i % 2] = g[b, c, y, xx]


def maxpool2_backward(g, idx, x_shape):
    g = np.ascontiguousarray(g)
    out = np.zeros(x_shape, dtype=g.dtype)
    _maxpool_bwd(g, np.ascontiguousarray(idx, dtype=np.uint8), out)
    return out


cdef inline real _pix(const real[:, :, :, ::1] img, Py_ssize_t b, Py_ssize_t c,
                      Py_ssize_t y, Py_ssize_t x, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    if x < 0 or x >= W or y < 0 or y >= H:
        return 0
    return img[b, c, y, x]


def _gs_fwd(const real[:, :, :, ::1] img, const real[:, :, :, ::1] grid, real[:, :, :, ::1] out):
    cdef Py_ssize_t B = img.shape[0], C = img.shape[1], H = img.shape[2], W = img.shape[3]
    cdef Py_ssize_t Ho = grid.shape[1], Wo = grid.shape[2]
    cdef Py_ssize_t b, c, p, q, x0, y0
    cdef real ix, iy, fx, fy, wx1, wy1, wx0, wy0
    with nogil:
        for b in range(B):
            for p in range(Ho):
                for q in range(Wo):
                    ix = (grid[b, p, q, 0] + 1) * (0.5 * (W - 1))
                    iy = (grid[b, p, q, 1] + 1) * (0.5 * (H - 1))
                    fx = floor(ix)
                    fy = floor(iy)
                    x0 = <Py_ssize_t>fx
                    y0 = <Py_ssize_t>fy
                    wx1 = ix - fx
                    wy1 = iy - fy
                    wx0 = 1 - wx1
                    wy0 = 1 - wy1
                    for c in range(C):
                        out[b, c, p, q] = (
                            _pix(img, b, c, y0, x0, H, W) * (wx0 * wy0)
                            + _pix(img, b, c, y0, x0 + 1, H, W) * (wx1 * wy0)
                            + _pix(img, b, c, y0 + 1, x0, H, W) * (wx0 * wy1)
                            + _pix(img, b, c, y0 + 1, x0 + 1, H, W) * (wx1 * wy1))


def grid_sample_forward(img, grid):
    img = np.ascontiguousarray(img)
    grid = np.ascontiguousarray(grid, dtype=img.dtype)
    B, C = img.shape[:2]
    out = np.empty((B, C, grid.shape[1], grid.shape[2]), dtype=img.dtype)
    _gs_fwd(img, grid, out)
    return out


cdef inline void _scatter(real[:, :, :, ::1] gimg, Py_ssize_t b, Py_ssize_t c, Py_ssize_t y,
                          Py_ssize_t x, Py_ssize_t H, Py_ssize_t W, real v) noexcept nogil:
    if x < 0 or x >= W or y < 0 or y >= H:
        return
    gimg[b, c, y, x] += v


def _gs_bwd(const real[:, :, :, ::1] g, const real[:, :, :, ::1] img, const real[:, :, :, ::1] grid,
            real[:, :, :, ::1] gimg, real[:, :, :, ::1] ggrid, bint need_img, bint need_grid):
    cdef Py_ssize_t B = img.shape[0], C = img.shape[1], H = img.shape[2], W = img.shape[3]
    cdef Py_ssize_t Ho = grid.shape[1], Wo = grid.shape[2]
    cdef Py_ssize_t b, c, p, q, x0, y0
    cdef real ix, iy, fx, fy, wx1, wy1, wx0, wy0, go, v00, v10, v01, v11, dix, diy
    with nogil:
        for b in range(B):
            for p in range(Ho):
                for q in range(Wo):
                    ix = (grid[b, p, q, 0] + 1) * (0.5 * (W - 1))
                    iy = (grid[b, p, q, 1] + 1) * (0.5 * (H - 1))
                    fx = floor(ix)
                    fy = floor(iy)
                    x0 = <Py_ssize_t>fx
                    y0 = <Py_ssize_t>fy
                    wx1 = ix - fx
                    wy1 = iy - fy
                    wx0 = 1 - wx1
                    wy0 = 1 - wy1
                    dix = 0
                    diy = 0
                    for c in range(C):
                        go = g[b, c, p, q]
                        if need_img:
                            _scatter(gimg, b, c, y0, x0, H, W, go * (wx0 * wy0))
                            _scatter(gimg, b, c, y0, x0 + 1, H, W, go * (wx1 * wy0))
                            _scatter(gimg, b, c, y0 + 1, x0, H, W, go * (wx0 * wy1))
                            _scatter(gimg, b, c, y0 + 1, x0 + 1, H, W, go * (wx1 * wy1))
                        if need_grid:
                            v00 = _pix(img, b, c, y0, x0, H, W)
                            v10 = _pix(img, b, c, y0, x0 + 1, H, W)
                            v01 = _pix(img, b, c, y0 + 1, x0, H, W)
                            v11 = _pix(img, b, c, y0 + 1, x0 + 1, H, W)
                            dix = dix + go * ((v10 - v00) * wy0 + (v11 - v01) * wy1)
                            diy = diy + go * ((v01 - v00) * wx0 + (v11 - v10) * wx1)
                    if need_grid:
                        ggrid[b, p, q, 0] = dix * (0.5 * (W - 1))
                        ggrid[b, p, q, 1] = diy * (0.5 * (H - 1))


def grid_sample_backward(g, img, grid, need_img=True, need_grid=True):
    img = np.ascontiguousarray(img)
    g = np.ascontiguousarray(g, dtype=img.dtype)
    grid = np.ascontiguousarray(grid, dtype=img.dtype)
    gimg = np.zeros(img.shape, dtype=img.dtype)
    ggrid = np.zeros(grid.shape, dtype=img.dtype)
    _gs_bwd(g, img, grid, gimg, ggrid, need_img, need_grid)
    return (gimg if need_img else None), (ggrid if need_grid else None)
