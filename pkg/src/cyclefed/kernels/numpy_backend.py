"""Pure-numpy kernels for convolution patch extraction and 2x2 max pooling.

All functions operate on NHWC arrays (batch, height, width, channels) and
assume stride 1 / valid padding for the conv patch ops. The compiled
extension in ``_fastkern`` implements the same functions with identical
semantics; both back ends produce bitwise-equal outputs.
"""

import numpy as np


def im2col(x, kh, kw):
    """Extract kh x kw patches: (n,h,w,c) -> (n, oh, ow, kh*kw*c)."""
    n, h, w, c = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    out = np.empty((n, oh, ow, kh * kw * c), dtype=x.dtype)
    col = out.reshape(n, oh, ow, kh, kw, c)
    for ki in range(kh):
        for kj in range(kw):
            col[:, :, :, ki, kj, :] = x[:, ki : ki + oh, kj : kj + ow, :]
    return out


def col2im(cols, x_shape, kh, kw):
    """Adjoint of im2col: scatter-add patch gradients back to image shape."""
    n, h, w, c = x_shape
    oh, ow = h - kh + 1, w - kw + 1
    dx = np.zeros(x_shape, dtype=cols.dtype)
    col = cols.reshape(n, oh, ow, kh, kw, c)
    for ki in range(kh):
        for kj in range(kw):
            dx[:, ki : ki + oh, kj : kj + ow, :] += col[:, :, :, ki, kj, :]
    return dx


def maxpool2x2_forward(x):
    """2x2 / stride-2 max pool; returns (pooled, argmax in [0,4)).

    Window positions are ordered row-major; ties pick the first maximum,
    so the backward pass routes each gradient to exactly one input cell.
    """
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    win = (
        x[:, : oh * 2, : ow * 2, :]
        .reshape(n, oh, 2, ow, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, oh, ow, c, 4)
    )
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(dy, idx, x_shape):
    """Route pooled gradients back to the argmax cells of each window."""
    n, h, w, c = x_shape
    oh, ow = h // 2, w // 2
    dwin = np.zeros((n, oh, ow, c, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, : oh * 2, : ow * 2, :] = (
        dwin.reshape(n, oh, ow, c, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, oh * 2, ow * 2, c)
    )
    return dx
