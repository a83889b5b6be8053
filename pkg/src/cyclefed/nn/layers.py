"""Layer definitions operating on slices of a flat parameter vector.

Layers are stateless descriptions: ``forward`` takes the input plus a view
into the model's flat parameter vector and returns (output, cache);
``backward`` takes the upstream gradient, the same parameter view, a view
into the flat gradient vector to fill, and the cache. Weight layers use
He fan-in initialization with zero biases.
"""

import math

import numpy as np

from .. import kernels


class Conv2D:
    """3x3-style valid convolution (cross-correlation), stride 1, NHWC."""

    def __init__(self, kh, kw, c_in, c_out):
        self.kh = kh
        self.kw = kw
        self.c_in = c_in
        self.c_out = c_out
        self._nw = kh * kw * c_in * c_out
        self.n_params = self._nw + c_out

    def init_params(self, p, rng):
        fan_in = self.kh * self.kw * self.c_in
        p[: self._nw] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=self._nw)
        p[self._nw :] = 0.0

    def forward(self, x, p, train, rng):
        x = np.ascontiguousarray(x)
        cols = kernels.im2col(x, self.kh, self.kw)
        n, oh, ow, k = cols.shape
        w = p[: self._nw].reshape(k, self.c_out)
        y = cols.reshape(-1, k) @ w + p[self._nw :]
        return y.reshape(n, oh, ow, self.c_out), (cols, x.shape)

    def backward(self, dy, p, g, cache):
        cols, x_shape = cache
        n, oh, ow, k = cols.shape
        w = p[: self._nw].reshape(k, self.c_out)
        dyf = dy.reshape(-1, self.c_out)
        colsf = cols.reshape(-1, k)
        g[: self._nw] = (colsf.T @ dyf).ravel()
        g[self._nw :] = dyf.sum(axis=0)
        dcols = np.ascontiguousarray((dyf @ w.T).reshape(n, oh, ow, k))
        return kernels.col2im(dcols, x_shape, self.kh, self.kw)


class Dense:
    def __init__(self, n_in, n_out):
        self.n_in = n_in
        self.n_out = n_out
        self._nw = n_in * n_out
        self.n_params = self._nw + n_out

    def init_params(self, p, rng):
        p[: self._nw] = rng.normal(0.0, math.sqrt(2.0 / self.n_in), size=self._nw)
        p[self._nw :] = 0.0

    def forward(self, x, p, train, rng):
        w = p[: self._nw].reshape(self.n_in, self.n_out)
        return x @ w + p[self._nw :], x

    def backward(self, dy, p, g, cache):
        x = cache
        w = p[: self._nw].reshape(self.n_in, self.n_out)
        g[: self._nw] = (x.T @ dy).ravel()
        g[self._nw :] = dy.sum(axis=0)
        return dy @ w.T


class ReLU:
    n_params = 0

    def forward(self, x, p, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, p, g, cache):
        return dy * cache


class MaxPool2:
    """2x2 max pooling with stride 2; first maximum wins ties."""

    n_params = 0

    def forward(self, x, p, train, rng):
        x = np.ascontiguousarray(x)
        out, idx = kernels.maxpool2x2_forward(x)
        return out, (idx, x.shape)

    def backward(self, dy, p, g, cache):
        idx, x_shape = cache
        return kernels.maxpool2x2_backward(np.ascontiguousarray(dy), idx, x_shape)


class Dropout:
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval."""

    n_params = 0

    def __init__(self, p_drop):
        if not 0.0 <= p_drop < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p_drop = p_drop

    def forward(self, x, p, train, rng):
        if not train or self.p_drop == 0.0:
            return x, None
        keep = (rng.random(x.shape) >= self.p_drop).astype(x.dtype)
        keep /= 1.0 - self.p_drop
        return x * keep, keep

    def backward(self, dy, p, g, cache):
        if cache is None:
            return dy
        return dy * cache


class Flatten:
    n_params = 0

    def forward(self, x, p, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, p, g, cache):
        return dy.reshape(cache)
