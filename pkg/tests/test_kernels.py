import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from advst import _kernels
from advst._kernels import _reference as ref

native = pytest.importorskip("advst._kernels._native") if _kernels.native_available() else None
needs_native = pytest.mark.skipif(native is None, reason="compiled kernels not built")

dtypes = st.sampled_from([np.float32, np.float64])


def _tol(dtype):
    return dict(rtol=1e-5, atol=1e-5) if dtype == np.float32 else dict(rtol=1e-12, atol=1e-12)


@needs_native
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 8), st.integers(3, 8), st.integers(1, 3), dtypes,
       st.integers(0, 2**31))
def test_im2col_and_col2im_agree(b, c, h, w, k, dtype, seed):
    x = np.random.default_rng(seed).normal(size=(b, c, h, w)).astype(dtype)
    cols = ref.im2col(x, k)
    np.testing.assert_array_equal(native.im2col(x, k), cols)
    g = np.random.default_rng(seed + 1).normal(size=cols.shape).astype(dtype)
    np.testing.assert_allclose(native.col2im(g, x.shape, k), ref.col2im(g, x.shape, k), **_tol(dtype))


@needs_native
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), dtypes, st.integers(0, 2**31))
def test_maxpool_agrees(b, c, h2, w2, dtype, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, c, 2 * h2, 2 * w2)).astype(dtype)
    out_r, idx_r = ref.maxpool2_forward(x)
    out_n, idx_n = native.maxpool2_forward(x)
    np.testing.assert_array_equal(out_n, out_r)
    np.testing.assert_array_equal(idx_n, idx_r)
    g = rng.normal(size=out_r.shape).astype(dtype)
    np.testing.assert_array_equal(native.maxpool2_backward(g, idx_n, x.shape), ref.maxpool2_backward(g, idx_r, x.shape))


@needs_native
def test_maxpool_ties_pick_first_in_both():
    x = np.zeros((1, 1, 2, 2))
    assert ref.maxpool2_forward(x)[1].item() == 0
    assert native.maxpool2_forward(x)[1].item() == 0


@needs_native
@given(st.integers(1, 2), st.integers(1, 3), st.integers(2, 7), st.integers(2, 7), st.integers(1, 5),
       st.integers(1, 5), dtypes, st.integers(0, 2**31))
def test_grid_sample_agrees(b, c, h, w, oh, ow, dtype, seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(b, c, h, w)).astype(dtype)
    grid = rng.uniform(-1.3, 1.3, size=(b, oh, ow, 2)).astype(dtype)
    np.testing.assert_allclose(native.grid_sample_forward(img, grid), ref.grid_sample_forward(img, grid),
                               **_tol(dtype))
    g = rng.normal(size=(b, c, oh, ow)).astype(dtype)
    for got, want in zip(native.grid_sample_backward(g, img, grid, True, True),
                         ref.grid_sample_backward(g, img, grid, True, True)):
        np.testing.assert_allclose(got, want, **_tol(dtype))


def test_grid_sample_identity_grid_reproduces_image(rng):
    img = rng.uniform(size=(1, 2, 4, 5))
    ys, xs = np.meshgrid(np.linspace(-1, 1, 4), np.linspace(-1, 1, 5), indexing="ij")
    grid = np.stack([xs, ys], axis=-1)[None]
    np.testing.assert_allclose(_kernels.grid_sample_forward(img, grid), img, atol=1e-12)


def test_grid_sample_outside_is_zero(rng):
    img = rng.uniform(size=(1, 1, 3, 3))
    grid = np.full((1, 2, 2, 2), 5.0)
    np.testing.assert_array_equal(_kernels.grid_sample_forward(img, grid), 0.0)


def test_backend_reported():
    assert _kernels.BACKEND in ("native", "python")
