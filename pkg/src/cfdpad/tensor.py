"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on tensors that require gradients records its inputs and a
backward closure.  ``Tensor.backward`` linearises the recorded graph into a
:class:`Tape` (inputs before outputs) and sweeps it once in reverse.
"""

from __future__ import annotations

import contextlib
import hashlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run the enclosed block without recording anything on a tape."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-dimensional float64 array that may take part in differentiation.

    Attributes:
        data: the values, always a float64 ndarray.
        requires_grad: whether gradients flow to (or through) this tensor.
        grad: accumulated gradient after ``backward``; same shape as ``data``.
        node_id: position on the most recent tape this tensor was swept on.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def backward(self) -> "Tape":
        """Populate ``grad`` on every leaf that requires it; returns the tape used."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        tape = Tape.from_root(self)
        tape.sweep(self)
        return tape

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Topologically ordered list of the nodes reachable from a root."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._prev):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        for i, node in enumerate(order):
            node.node_id = i
        return cls(order)

    def sweep(self, root: Tensor) -> None:
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._prev, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], op: str, backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, (a, b), "div", backward)


def power(x: Tensor, p: float) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g * p * x.data ** (p - 1),)

    return _result(x.data**p, (x,), "pow", backward)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        return (g * out_data,)

    return _result(out_data, (x,), "exp", backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), "log", backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the derivative at exactly 0 is taken as 0."""
    x = as_tensor(x)
    pos = x.data > 0

    def backward(g):
        return (g * pos,)

    return _result(np.where(pos, x.data, 0.0), (x,), "relu", backward)


# reductions and shape ops

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), "sum", backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), "reshape", backward)


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows ``x[index]`` along the first axis; repeated indices are fine."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), "take_rows", backward)


def pick(x: Tensor, cols: Sequence[int]) -> Tensor:
    """Per-row column selection: ``out[n] = x[n, cols[n]]`` for a 2-D ``x``."""
    x = as_tensor(x)
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, cols] = g
        return (gx,)

    return _result(x.data[rows, cols], (x,), "pick", backward)


# network layers

def _check_rank(name: str, t: Tensor, rank: int) -> None:
    if t.ndim != rank:
        raise ValueError(f"{name}: expected rank {rank}, got shape {t.shape}")


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape (N, D)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _check_rank("dense input", x, 2)
    _check_rank("dense weight", weight, 2)
    if x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(
            f"dense: input {x.shape}, weight {weight.shape}, bias {bias.shape} do not agree"
        )

    def backward(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return _result(x.data @ weight.data.T + bias.data, (x, weight, bias), "dense", backward)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: input of shape (N, C, H, W).
        kernel: weights of shape (Co, C, kh, kw).
        bias: shape (Co,).
        stride: step between output positions.
        pad: zero rows/columns added on every border.

    Returns:
        Tensor of shape (N, Co, H', W') with H' = (H + 2*pad - kh) // stride + 1.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    _check_rank("conv2d input", x, 4)
    _check_rank("conv2d kernel", kernel, 4)
    n, c, h, w = x.shape
    co, ck, kh, kw = kernel.shape
    if ck != c or bias.shape != (co,):
        raise ValueError(
            f"conv2d: input {x.shape}, kernel {kernel.shape}, bias {bias.shape} do not agree"
        )
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: bad stride={stride} or pad={pad}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # (N, C, Ho, Wo, kh, kw) view of every receptive field
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]

    def backward(g):
        gk = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, kernel.data, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gk, g.sum(axis=(0, 2, 3))

    return _result(out, (x, kernel, bias), "conv2d", backward)


def global_avgpool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (N, C, H, W) -> (N, C)."""
    x = as_tensor(x)
    _check_rank("global_avgpool input", x, 4)
    hw = x.shape[2] * x.shape[3]

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, x.shape).copy(),)

    return _result(x.data.mean(axis=(2, 3)), (x,), "avgpool", backward)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if np.isnan(arr).any():
        raise ValueError(f"{name}: NaN in input")


def softmax(o: Tensor) -> Tensor:
    """Row-wise softmax of a (N, K) tensor, stabilised by subtracting the row max."""
    o = as_tensor(o)
    _check_rank("softmax input", o, 2)
    _check_finite("softmax", o.data)
    z = np.exp(o.data - o.data.max(axis=1, keepdims=True))
    s = z / z.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _result(s, (o,), "softmax", backward)


def log_softmax(o: Tensor) -> Tensor:
    o = as_tensor(o)
    _check_rank("log_softmax input", o, 2)
    _check_finite("log_softmax", o.data)
    shifted = o.data - o.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _result(out, (o,), "log_softmax", backward)


def parameters_hash(arrays: Iterable[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()
