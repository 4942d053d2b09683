"""Layers with explicit forward/backward passes on (B, C, H, W, D) arrays.

Each layer caches what its backward pass needs and accumulates parameter
gradients in place, so a training step can sum gradients over several
micro-batches before the optimiser runs. Gradients are exact reverse-mode
derivatives; the test suite checks them against central finite differences.
"""

import numpy as np

from .. import _kernels
from ..errors import NumericalError, ShapeError


def as_tensor5(x, name="tensor"):
    x = np.asarray(x)
    if x.ndim != 5:
        raise ShapeError(f"{name} must have dims (B, C, H, W, D), got shape {x.shape}")
    return np.ascontiguousarray(x)


def _check_finite(x, layer):
    if not np.isfinite(x).all():
        raise NumericalError(f"non-finite activation after layer {layer}")


class Layer:
    """Base: parameter/grad bookkeeping shared by every layer."""

    name = "layer"

    def __init__(self):
        self._params = []  # (attr, grad_attr) names in declaration order

    def _register(self, attr, value):
        setattr(self, attr, value)
        setattr(self, "g_" + attr, np.zeros_like(value))
        self._params.append(attr)

    def params(self):
        return [(f"{self.name}.{a}", getattr(self, a)) for a in self._params]

    def grads(self):
        return [getattr(self, "g_" + a) for a in self._params]

    def zero_grads(self):
        for a in self._params:
            getattr(self, "g_" + a).fill(0.0)

    def set_params(self, arrays):
        """Replace parameters from a flat iterator (checkpoint loading)."""
        for a in self._params:
            new = next(arrays)
            cur = getattr(self, a)
            if new.shape != cur.shape:
                raise ShapeError(f"{self.name}.{a}: checkpoint shape {new.shape} != {cur.shape}")
            setattr(self, a, new.astype(cur.dtype))
            setattr(self, "g_" + a, np.zeros_like(getattr(self, a)))


class Conv3d(Layer):
    """3x3x3 convolution, padding 1, stride 1 or 2, He-initialised.

    Convs feeding an instance norm run without bias (the norm would
    cancel it and its gradient would be identically zero).
    """

    def __init__(self, cin, cout, stride=1, rng=None, dtype=np.float32, bias=True, name="conv"):
        super().__init__()
        self.name = name
        self.stride = stride
        scale = np.sqrt(2.0 / (cin * 27))
        w = (rng.standard_normal((cout, cin, 3, 3, 3)) * scale if rng is not None
             else np.zeros((cout, cin, 3, 3, 3)))
        self._register("w", w.astype(dtype))
        self.has_bias = bias
        if bias:
            self._register("b", np.zeros(cout, dtype=dtype))

    def forward(self, x):
        self._x = x
        y = _kernels.conv3d_forward(x, self.w, self.stride)
        if self.has_bias:
            y += self.b[None, :, None, None, None]
        _check_finite(y, self.name)
        return y

    def backward(self, gy):
        self.g_w += _kernels.conv3d_grad_weight(gy, self._x, self.stride).astype(self.w.dtype)
        if self.has_bias:
            self.g_b += gy.sum(axis=(0, 2, 3, 4)).astype(self.b.dtype)
        return _kernels.conv3d_grad_input(gy, self.w, self._x.shape[2:], self.stride)


class Conv1x1(Layer):
    """Pointwise channel mix, used by the head and residual projections."""

    def __init__(self, cin, cout, rng=None, dtype=np.float32, name="conv1"):
        super().__init__()
        self.name = name
        scale = np.sqrt(2.0 / cin)
        w = rng.standard_normal((cout, cin)) * scale if rng is not None else np.zeros((cout, cin))
        self._register("w", w.astype(dtype))
        self._register("b", np.zeros(cout, dtype=dtype))

    def forward(self, x):
        self._x = x
        y = np.einsum("bchwd,oc->bohwd", x, self.w) + self.b[None, :, None, None, None]
        _check_finite(y, self.name)
        return np.ascontiguousarray(y)

    def backward(self, gy):
        self.g_w += np.einsum("bohwd,bchwd->oc", gy, self._x).astype(self.w.dtype)
        self.g_b += gy.sum(axis=(0, 2, 3, 4)).astype(self.b.dtype)
        return np.ascontiguousarray(np.einsum("bohwd,oc->bchwd", gy, self.w))


class InstanceNorm3d(Layer):
    """Per-sample, per-channel normalisation over the spatial axes."""

    eps = 1e-5

    def __init__(self, channels, dtype=np.float32, name="inorm"):
        super().__init__()
        self.name = name
        self._register("gamma", np.ones(channels, dtype=dtype))
        self._register("beta", np.zeros(channels, dtype=dtype))

    def forward(self, x):
        mu = x.mean(axis=(2, 3, 4), keepdims=True)
        var = x.var(axis=(2, 3, 4), keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        y = self.gamma[None, :, None, None, None] * self._xhat + self.beta[None, :, None, None, None]
        _check_finite(y, self.name)
        return y

    def backward(self, gy):
        self.g_gamma += (gy * self._xhat).sum(axis=(0, 2, 3, 4)).astype(self.gamma.dtype)
        self.g_beta += gy.sum(axis=(0, 2, 3, 4)).astype(self.beta.dtype)
        gh = gy * self.gamma[None, :, None, None, None]
        m1 = gh.mean(axis=(2, 3, 4), keepdims=True)
        m2 = (gh * self._xhat).mean(axis=(2, 3, 4), keepdims=True)
        return self._inv * (gh - m1 - self._xhat * m2)


class LeakyReLU(Layer):
    def __init__(self, slope=0.01, name="lrelu"):
        super().__init__()
        self.name = name
        self.slope = slope

    def forward(self, x):
        self._neg = x < 0
        return np.where(self._neg, self.slope * x, x)

    def backward(self, gy):
        return np.where(self._neg, self.slope * gy, gy)


class Sigmoid(Layer):
    name = "sigmoid"

    def __init__(self):
        super().__init__()

    def forward(self, x):
        # numerically stable in both tails
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._y = out
        return out

    def backward(self, gy):
        return gy * self._y * (1.0 - self._y)


class TrilinearUp2x(Layer):
    """Doubling upsample, separable linear weights with half-voxel alignment.

    Each axis applies a fixed (2n x n) interpolation matrix, so the
    backward pass is exactly the transposed matrix.
    """

    name = "up2x"
    _cache = {}

    def __init__(self):
        super().__init__()

    @classmethod
    def _matrix(cls, n):
        if n not in cls._cache:
            m = np.zeros((2 * n, n))
            for j in range(2 * n):
                c = (j + 0.5) / 2.0 - 0.5
                i0 = int(np.floor(c))
                w1 = c - i0
                m[j, min(max(i0, 0), n - 1)] += 1.0 - w1
                m[j, min(max(i0 + 1, 0), n - 1)] += w1
            cls._cache[n] = m
        return cls._cache[n]

    def forward(self, x):
        self._shape = x.shape
        mz = self._matrix(x.shape[2]).astype(x.dtype)
        my = self._matrix(x.shape[3]).astype(x.dtype)
        mx = self._matrix(x.shape[4]).astype(x.dtype)
        y = np.einsum("bchwd,Hh->bcHwd", x, mz)
        y = np.einsum("bcHwd,Ww->bcHWd", y, my)
        y = np.einsum("bcHWd,Dd->bcHWD", y, mx)
        return np.ascontiguousarray(y)

    def backward(self, gy):
        mz = self._matrix(self._shape[2]).astype(gy.dtype)
        my = self._matrix(self._shape[3]).astype(gy.dtype)
        mx = self._matrix(self._shape[4]).astype(gy.dtype)
        g = np.einsum("bcHWD,Dd->bcHWd", gy, mx)
        g = np.einsum("bcHWd,Ww->bcHwd", g, my)
        g = np.einsum("bcHwd,Hh->bchwd", g, mz)
        return np.ascontiguousarray(g)


class Sequential(Layer):
    def __init__(self, *layers, name="seq"):
        super().__init__()
        self.name = name
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, gy):
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def set_params(self, arrays):
        for layer in self.layers:
            layer.set_params(arrays)


class ResBlock(Layer):
    """Two 3x3x3 conv + instance-norm stages with an identity (or projected) skip."""

    def __init__(self, cin, cout, slope=0.01, rng=None, dtype=np.float32, name="res"):
        super().__init__()
        self.name = name
        self.conv1 = Conv3d(cin, cout, 1, rng, dtype, bias=False, name=f"{name}.conv1")
        self.n1 = InstanceNorm3d(cout, dtype, name=f"{name}.n1")
        self.a1 = LeakyReLU(slope)
        self.conv2 = Conv3d(cout, cout, 1, rng, dtype, bias=False, name=f"{name}.conv2")
        self.n2 = InstanceNorm3d(cout, dtype, name=f"{name}.n2")
        self.proj = Conv1x1(cin, cout, rng, dtype, name=f"{name}.proj") if cin != cout else None
        self.a2 = LeakyReLU(slope)
        self._children = [self.conv1, self.n1, self.conv2, self.n2] + (
            [self.proj] if self.proj is not None else []
        )

    def forward(self, x):
        y = self.n2.forward(self.conv2.forward(self.a1.forward(self.n1.forward(self.conv1.forward(x)))))
        skip = self.proj.forward(x) if self.proj is not None else x
        return self.a2.forward(y + skip)

    def backward(self, gy):
        g = self.a2.backward(gy)
        g_main = self.n1.backward(self.a1.backward(self.conv2.backward(self.n2.backward(g))))
        gx = self.conv1.backward(g_main)
        gx = gx + (self.proj.backward(g) if self.proj is not None else g)
        return gx

    def params(self):
        return [p for c in self._children for p in c.params()]

    def grads(self):
        return [g for c in self._children for g in c.grads()]

    def zero_grads(self):
        for c in self._children:
            c.zero_grads()

    def set_params(self, arrays):
        for c in self._children:
            c.set_params(arrays)
