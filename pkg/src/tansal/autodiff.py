"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and records enough of the computation graph
to run backpropagation. Gradients are produced by a topological sweep that
accumulates into a scratch table and only writes into ``.grad`` of leaf
tensors, so calling ``backward`` twice on different losses adds gradients the
way separate loss terms should.

Broadcasting follows numpy rules; the backward pass sums gradients over the
broadcast axes. Only the ops the saliency pipeline needs are implemented,
each with a hand-written vector-Jacobian product.
"""

from __future__ import annotations

import contextlib
import json
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True
_finite_checks = False


def set_finite_checks(enabled: bool):
    """Raise FloatingPointError as soon as any op produces a NaN or inf."""
    global _finite_checks
    _finite_checks = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(grad.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op")

    # keep numpy from absorbing Tensor operands elementwise; arithmetic with
    # ndarrays must go through the reflected Tensor operators instead
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None
        self._op = "leaf"

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self._op}{flag})"

    def backward(self, grad=None):
        """Backpropagate from this tensor; seeds a scalar with 1 by default."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor outside the gradient graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError("seed gradient shape mismatch")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        pending = {id(self): grad}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                pending[pid] = pg if pid not in pending else pending[pid] + pg

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return _node(a + b, (self, other), vjp, "add")

    __radd__ = __add__

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return _node(a - b, (self, other), vjp, "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return _node(a * b, (self, other), vjp, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def vjp(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return _node(a / b, (self, other), vjp, "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        out = a ** exponent

        def vjp(g):
            return (g * exponent * a ** (exponent - 1),)

        return _node(out, (self,), vjp, "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")

        def vjp(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return _node(a @ b, (self, other), vjp, "matmul")

    # -- elementwise functions ---------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _node(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        a = self.data
        return _node(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return _node(out, (self,), lambda g: (g / (2.0 * out),), "sqrt")

    def tanh(self):
        out = np.tanh(self.data)
        return _node(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def relu(self):
        a = self.data
        return _node(np.maximum(a, 0.0), (self,), lambda g: (g * (a > 0.0),), "relu")

    def sigmoid(self):
        a = self.data
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return _node(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def softplus(self):
        a = self.data
        out = np.logaddexp(0.0, a)

        def vjp(g):
            return (g / (1.0 + np.exp(-a)),)

        return _node(out, (self,), vjp, "softplus")

    def gelu(self):
        # tanh approximation
        a = self.data
        k = math.sqrt(2.0 / math.pi)
        inner = k * (a + 0.044715 * a ** 3)
        t = np.tanh(inner)
        out = 0.5 * a * (1.0 + t)

        def vjp(g):
            dinner = k * (1.0 + 3.0 * 0.044715 * a ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * dinner),)

        return _node(out, (self,), vjp, "gelu")

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self.data
        out = a.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            gg = g if axis is None or keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.shape).copy(),)

        return _node(out, (self,), vjp, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def max(self, axis=None, keepdims: bool = False):
        a = self.data
        out = a.max(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                peak = out
                gg = g
            else:
                peak = out if keepdims else np.expand_dims(out, axis)
                gg = g if keepdims else np.expand_dims(g, axis)
            mask = (a == peak).astype(np.float64)
            counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
            return (mask / counts * gg,)

        return _node(out, (self,), vjp, "max")

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a_shape = self.data.shape
        out = self.data.reshape(shape)
        return _node(out, (self,), lambda g: (g.reshape(a_shape),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = np.argsort(axes)
        out = self.data.transpose(axes)
        return _node(out, (self,), lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.data.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    def __getitem__(self, key):
        a = self.data
        out = a[key]

        def vjp(g):
            z = np.zeros_like(a)
            np.add.at(z, key, g)
            return (z,)

        return _node(out, (self,), vjp, "getitem")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple, vjp, op: str) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == np.float64 else data.astype(np.float64)
    out.grad = None
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def make_node(data: np.ndarray, parents: tuple, vjp, op: str = "custom") -> Tensor:
    """Build a graph node for an externally computed op with a custom VJP."""
    return _node(np.asarray(data, dtype=np.float64), tuple(parents), vjp, op)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), vjp, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(out, tuple(tensors), vjp, "stack")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (x,), vjp, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a = x.data
    n = a.shape[-1]
    mu = a.mean(axis=-1, keepdims=True)
    centered = a - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = gamma.data * xhat + beta.data

    def vjp(g):
        dgamma = _unbroadcast(g * xhat, gamma.data.shape)
        dbeta = _unbroadcast(g, beta.data.shape)
        dxhat = g * gamma.data
        # classic fused layer-norm backward
        dx = inv_std / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), vjp, "layer_norm")


def _windows(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(x, (kh, kw), axis=(2, 3))


def _conv2d_raw(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    win = _windows(x, w.shape[2], w.shape[3], pad)  # (N, C, Ho, Wo, kh, kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, Cout)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int = 0) -> Tensor:
    """2-D cross-correlation, stride 1, symmetric zero padding."""
    xd, wd = x.data, w.data
    kh, kw = wd.shape[2], wd.shape[3]
    out = _conv2d_raw(xd, wd, padding)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def vjp(g):
        win = _windows(xd, kh, kw, padding)
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, C, kh, kw)
        w_rot = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx = _conv2d_raw(g, w_rot, kh - 1 - padding)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, vjp, "conv2d")


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    n, c, h, wdt = x.data.shape
    if h % k or wdt % k:
        raise ValueError(f"spatial dims {h}x{wdt} not divisible by pool size {k}")
    out = x.data.reshape(n, c, h // k, k, wdt // k, k).mean(axis=(3, 5))

    def vjp(g):
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return (up / (k * k),)

    return _node(out, (x,), vjp, "avg_pool2d")


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, wdt = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(g):
        return (g.reshape(n, c, h, 2, wdt, 2).sum(axis=(3, 5)),)

    return _node(out, (x,), vjp, "upsample_nearest2x")


# -- optimization -------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        if any(not p.requires_grad for p in self.params):
            raise ValueError("optimizer received a tensor outside the gradient graph")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path: str, params: dict, meta: dict | None = None):
    """Write named tensors plus a JSON metadata blob to an .npz file."""
    arrays = {f"param/{name}": t.data for name, t in params.items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str) -> tuple[dict, dict]:
    """Read back arrays and metadata written by save_checkpoint."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        arrays = {
            key[len("param/"):]: data[key]
            for key in data.files
            if key.startswith("param/")
        }
    return arrays, meta


def assign_checkpoint(params: dict, arrays: dict):
    """Load arrays into an existing named-parameter dict, checking shapes."""
    missing = sorted(set(params) - set(arrays))
    unexpected = sorted(set(arrays) - set(params))
    if missing or unexpected:
        raise ValueError(
            f"checkpoint mismatch: missing {missing or 'none'}, unexpected {unexpected or 'none'}"
        )
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.data.shape:
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {arr.shape} vs model {tensor.data.shape}"
            )
        tensor.data = arr.astype(np.float64)
