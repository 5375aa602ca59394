"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps a float64 ndarray. Operations on tensors record a tape
(parent links plus a closure that pushes the incoming gradient to the
parents). Calling ``backward()`` on a scalar tensor walks the tape in
reverse topological order. A tape can be walked once; reuse raises
``StateError``.
"""

import numpy as np

from .errors import ShapeError, StateError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = tuple(_parents)
        self._backward_fn = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    # ---- graph traversal ----

    def backward(self):
        """Accumulate d(self)/d(node) into .grad over the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.data.shape}")
        if self._consumed:
            raise StateError("backward called on an already-consumed recording")
        self._consumed = True

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---- operator sugar ----

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---- elementwise arithmetic ----

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward_fn = bwd
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    out._backward_fn = bwd
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward_fn = bwd
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward_fn = bwd
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def bwd(g):
        ad, bd = a.data, b.data
        if a.requires_grad:
            if bd.ndim == 1 and ad.ndim >= 2:
                a._accumulate(_unbroadcast(np.expand_dims(g, -1) * bd, ad.shape))
            elif ad.ndim == 1:
                a._accumulate(_unbroadcast(g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else g * bd, ad.shape))
            else:
                a._accumulate(_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
        if b.requires_grad:
            if ad.ndim == 1 and bd.ndim >= 2:
                b._accumulate(_unbroadcast(np.outer(ad, g), bd.shape))
            elif bd.ndim == 1:
                b._accumulate(_unbroadcast(np.swapaxes(ad, -1, -2) @ g if ad.ndim > 1 else ad * g, bd.shape))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

    out._backward_fn = bwd
    return out


# ---- nonlinearities ----

def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    out._backward_fn = bwd
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * s * (1.0 - s))

    out._backward_fn = bwd
    return out


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * e)

    out._backward_fn = bwd
    return out


def log(a):
    a = as_tensor(a)
    out = Tensor(np.log(a.data), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    out._backward_fn = bwd
    return out


def sqrt(a):
    a = as_tensor(a)
    r = np.sqrt(a.data)
    out = Tensor(r, _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / r)

    out._backward_fn = bwd
    return out


# ---- reductions and shape ops ----

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,))

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.full_like(a.data, 1.0) * g)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    out._backward_fn = bwd
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    out._backward_fn = bwd
    return out


def transpose(a, axes=None):
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes), _parents=(a,))
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    out._backward_fn = bwd
    return out


def take(a, idx):
    a = as_tensor(a)
    out = Tensor(a.data[idx], _parents=(a,))

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    out._backward_fn = bwd
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    out._backward_fn = bwd
    return out


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), _parents=tuple(tensors))

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    out._backward_fn = bwd
    return out


# ---- convolution and pooling (small-kernel, stride 1 / pool 2) ----

def _im2col(x, kh, kw):
    b, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    s = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, (b, c, kh, kw, oh, ow), (s[0], s[1], s[2], s[3], s[2], s[3])
    )
    return np.ascontiguousarray(cols).reshape(b, c * kh * kw, oh * ow)


def _col2im(dcols, xshape, kh, kw):
    b, c, h, w = xshape
    oh, ow = h - kh + 1, w - kw + 1
    dcols = dcols.reshape(b, c, kh, kw, oh, ow)
    dx = np.zeros(xshape)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + oh, j:j + ow] += dcols[:, :, i, j]
    return dx


def conv2d(x, weight, bias, padding=1):
    """2-D convolution, stride 1. x: (B,C,H,W); weight: (O,C,kh,kw); bias: (O,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    o, c, kh, kw = weight.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw)
    wmat = weight.data.reshape(o, c * kh * kw)
    b_, _, hp, wp = xp.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    out_data = (wmat @ cols) + bias.data[:, None]
    out = Tensor(out_data.reshape(b_, o, oh, ow), _parents=(x, weight, bias))

    def bwd(g):
        g2 = g.reshape(b_, o, oh * ow)
        if bias.requires_grad:
            bias._accumulate(g2.sum(axis=(0, 2)))
        if weight.requires_grad:
            dw = np.einsum("bol,bml->om", g2, cols)
            weight._accumulate(dw.reshape(weight.data.shape))
        if x.requires_grad:
            dcols = wmat.T @ g2
            dxp = _col2im(dcols, xp.shape, kh, kw)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)

    out._backward_fn = bwd
    return out


def maxpool2d(x):
    """2x2 max pooling, stride 2. Trailing odd rows/columns are dropped."""
    x = as_tensor(x)
    b, c, h, w = x.data.shape
    oh, ow = h // 2, w // 2
    view = x.data[:, :, : oh * 2, : ow * 2].reshape(b, c, oh, 2, ow, 2)
    flat = view.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, 4)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0], _parents=(x,))

    def bwd(g):
        if not x.requires_grad:
            return
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros_like(x.data)
        dx[:, :, : oh * 2, : ow * 2] = (
            dflat.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * 2, ow * 2)
        )
        x._accumulate(dx)

    out._backward_fn = bwd
    return out


# ---- classification loss ----

def softmax_cross_entropy(logits, label):
    """-log softmax(logits)[label], numerically stable, differentiable.

    The gradient is softmax(logits) - onehot(label).
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 1 or logits.data.size == 0:
        raise ShapeError(f"logits must be a non-empty vector, got shape {logits.data.shape}")
    n = logits.data.size
    if not 0 <= int(label) < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    label = int(label)

    shifted = logits.data - logits.data.max()
    logz = np.log(np.exp(shifted).sum())
    probs = np.exp(shifted - logz)
    out = Tensor(logz - shifted[label], _parents=(logits,))

    def bwd(g):
        if logits.requires_grad:
            grad = probs.copy()
            grad[label] -= 1.0
            logits._accumulate(g * grad)

    out._backward_fn = bwd
    return out


def softmax(x):
    """Plain-array stable softmax (no autodiff)."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()
