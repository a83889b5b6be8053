"""Kernel correctness: naive-loop oracles, adjointness, back-end parity."""

import numpy as np
import pytest

from cyclefed.kernels import _fastkern, numpy_backend


def naive_im2col(x, kh, kw):
    n, h, w, c = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros((n, oh, ow, kh * kw * c), dtype=x.dtype)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                out[b, i, j] = x[b, i : i + kh, j : j + kw, :].ravel()
    return out


def naive_maxpool(x):
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    out = np.zeros((n, oh, ow, c), dtype=x.dtype)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    out[b, i, j, ch] = x[b, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, ch].max()
    return out


BACKENDS = [numpy_backend] + ([_fastkern] if _fastkern is not None else [])


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_matches_naive(backend, dtype, rng):
    x = np.ascontiguousarray(rng.normal(size=(3, 7, 6, 2)).astype(dtype))
    assert np.array_equal(backend.im2col(x, 3, 3), naive_im2col(x, 3, 3))


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
def test_col2im_is_adjoint_of_im2col(backend, rng):
    # <im2col(x), d> == <x, col2im(d)> for random x, d
    x = np.ascontiguousarray(rng.normal(size=(2, 8, 8, 3)))
    d = np.ascontiguousarray(rng.normal(size=(2, 6, 6, 27)))
    lhs = float((backend.im2col(x, 3, 3) * d).sum())
    rhs = float((x * backend.col2im(d, x.shape, 3, 3)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
def test_maxpool_forward_matches_naive(backend, rng):
    x = np.ascontiguousarray(rng.normal(size=(2, 8, 6, 4)).astype(np.float32))
    out, idx = backend.maxpool2x2_forward(x)
    assert np.array_equal(out, naive_maxpool(x))
    assert idx.min() >= 0 and idx.max() <= 3


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
def test_maxpool_backward_routes_to_argmax(backend, rng):
    x = np.ascontiguousarray(rng.normal(size=(1, 4, 4, 1)).astype(np.float64))
    out, idx = backend.maxpool2x2_forward(x)
    dy = np.ascontiguousarray(np.ones_like(out))
    dx = backend.maxpool2x2_backward(dy, idx, x.shape)
    # each window got exactly one unit of gradient, at its max cell
    assert dx.sum() == 4.0
    for i in range(2):
        for j in range(2):
            window = x[0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, 0]
            grads = dx[0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, 0]
            assert grads.flat[window.argmax()] == 1.0


def test_maxpool_tie_break_first_max():
    x = np.full((1, 2, 2, 1), 3.0)
    for backend in BACKENDS:
        _, idx = backend.maxpool2x2_forward(np.ascontiguousarray(x))
        assert idx[0, 0, 0, 0] == 0


@pytest.mark.skipif(_fastkern is None, reason="compiled kernels not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_bitwise_identical(dtype, rng):
    x = np.ascontiguousarray(rng.normal(size=(2, 10, 10, 3)).astype(dtype))
    cols_np = numpy_backend.im2col(x, 3, 3)
    assert np.array_equal(cols_np, _fastkern.im2col(x, 3, 3))
    d = np.ascontiguousarray(rng.normal(size=cols_np.shape).astype(dtype))
    assert np.array_equal(
        numpy_backend.col2im(d, x.shape, 3, 3), _fastkern.col2im(d, x.shape, 3, 3)
    )
    out_np, idx_np = numpy_backend.maxpool2x2_forward(x)
    out_f, idx_f = _fastkern.maxpool2x2_forward(x)
    assert np.array_equal(out_np, out_f)
    assert np.array_equal(idx_np, idx_f)
    dy = np.ascontiguousarray(rng.normal(size=out_np.shape).astype(dtype))
    assert np.array_equal(
        numpy_backend.maxpool2x2_backward(dy, idx_np, x.shape),
        _fastkern.maxpool2x2_backward(dy, idx_f, x.shape),
    )
