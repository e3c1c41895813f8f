"""A small reverse-mode autodiff tape over numpy arrays.

Every op builds a :class:`Tensor` holding its value, its parents and a closure
mapping the output gradient to one gradient per parent. ``Tensor.backward``
walks the graph in reverse topological order. Heavy recurrences (selective
scan, causal convolution, circular convolution) are fused ops with hand-written
backward passes so that the tape stays short.
"""

from __future__ import annotations

import numpy as np

from . import scan
from .fft import irfft_axis, rfft_axis


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            # interior gradients are not needed once propagated
            node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def leaf(x):
    """A parameter leaf that collects gradients."""
    return Tensor(np.array(x, dtype=np.float64, copy=True), requires_grad=True)


def _make(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise arithmetic -------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight (+ bias)`` for x of shape (..., n_in) and weight (n_in, n_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim > 2 else x
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, bias)
    if x.ndim > 2:
        out = reshape(out, lead + (weight.shape[-1],))
    return out


# pointwise nonlinearities ------------------------------------------------


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = x.data * s
    return _make(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def softplus(x):
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    return _make(out, (x,), lambda g: (g * _sigmoid(x.data),))


# reductions and shape plumbing -------------------------------------------


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, a1, a2):
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def flip(x, axis):
    x = as_tensor(x)
    return _make(np.flip(x.data, axis=axis).copy(), (x,), lambda g: (np.flip(g, axis=axis).copy(),))


def getitem(x, idx):
    """Basic (slice/int) indexing only."""
    x = as_tensor(x)

    def backward(g):
        out = np.zeros_like(x.data)
        out[idx] = g
        return (out,)

    return _make(x.data[idx].copy(), (x,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def gather_windows(x, window, stride, count):
    """Strided windows along axis -2: (..., T, d) -> (..., count, window, d)."""
    x = as_tensor(x)
    idx = np.arange(count)[:, None] * stride + np.arange(window)[None, :]
    out = x.data[..., idx, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        # positions idx[:, k] are distinct for fixed k, so += is safe
        for k in range(window):
            gx[..., idx[:, k], :] += g[..., :, k, :]
        return (gx,)

    return _make(out, (x,), backward)


def layer_norm(x, eps=1e-5):
    """Normalize over the last axis (no affine part)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        n = x.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gx = g - gm - xhat * (g * xhat).sum(axis=-1, keepdims=True) / n
        return (gx * inv,)

    return _make(xhat, (x,), backward)


# fused sequence ops --------------------------------------------------------


def causal_conv1d(x, weight, bias):
    """Depthwise causal convolution along axis -2.

    x: (..., N, C); weight: (C, width); bias: (C,). Output at position t reads
    inputs t - width + 1 .. t with implicit zeros on the left.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    width = weight.shape[1]
    n = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(width - 1, 0), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.broadcast_to(bias.data, x.shape).copy()
    for j in range(width):
        out += weight.data[:, j] * xp[..., j:j + n, :]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for j in range(width):
            gxp[..., j:j + n, :] += g * weight.data[:, j]
            gw[:, j] = (g * xp[..., j:j + n, :]).reshape(-1, x.shape[-1]).sum(axis=0)
        gb = g.reshape(-1, x.shape[-1]).sum(axis=0)
        return gxp[..., width - 1:, :], gw, gb

    return _make(out, (x, weight, bias), backward)


def selective_scan(u, delta, A, B, C, D):
    """Input-dependent diagonal state-space scan along axis -2 (see
    :mod:`wssm.numerics.scan`)."""
    u, delta, A, B, C, D = (as_tensor(t) for t in (u, delta, A, B, C, D))
    if np.any(delta.data <= 0):
        raise ValueError("selective_scan requires strictly positive delta")
    y = scan.scan_forward(u.data, delta.data, A.data, B.data, C.data, D.data)

    def backward(gy):
        return scan.scan_backward(u.data, delta.data, A.data, B.data, C.data, D.data, gy)

    return _make(y, (u, delta, A, B, C, D), backward)


def circular_conv(z, kernel):
    """Per-channel circular convolution along axis -2 via the real FFT.

    z: (..., N, d); kernel: (..., k, d) with k <= N, zero-padded to N.
    """
    z, kernel = as_tensor(z), as_tensor(kernel)
    n, k = z.shape[-2], kernel.shape[-2]
    if k > n:
        raise ValueError(f"filter length {k} exceeds sequence length {n}")
    fz = rfft_axis(z.data, axis=-2)
    fk = rfft_axis(kernel.data, axis=-2) if k == n else np.fft.rfft(kernel.data, n=n, axis=-2)
    out = irfft_axis(fz * fk, n, axis=-2)

    def backward(g):
        fg = rfft_axis(g, axis=-2)
        gz = gk = None
        if z.requires_grad:
            gz = unbroadcast(irfft_axis(fg * np.conj(fk), n, axis=-2), z.shape)
        if kernel.requires_grad:
            gk = irfft_axis(fg * np.conj(fz), n, axis=-2)[..., :k, :]
            gk = unbroadcast(gk, kernel.shape)
        return gz, gk

    return _make(out, (z, kernel), backward)
