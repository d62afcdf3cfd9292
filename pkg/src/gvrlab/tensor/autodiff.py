"""Reverse-mode differentiation over numpy arrays.

A :class:`Tensor` is an immutable array plus a ``requires_grad`` flag.
Operations executed while a :class:`GradTape` is active append a node
(output, parents, vector-Jacobian product) to the tape whenever at least
one parent requires a gradient. Recording order is a topological order,
so ``backward`` simply walks the nodes in reverse.

Only the primitives the toy video model needs are provided: elementwise
arithmetic with broadcasting, matmul, reductions, reshapes, concatenation,
layer norm, softmax, SiLU/GELU, plus the convolution, resize and attention
composites defined in sibling modules through :func:`record`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_ACTIVE: list["GradTape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.flags.writeable:
            arr = arr.view()
            arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class GradTape:
    """Records taped operations; use as a context manager.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = sum_(mul(x, x))
    >>> tape.gradient(loss, [x])[0]
    array([2., 4., 6.], dtype=float32)
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Adjoints keyed by ``id(tensor)`` for every tensor reached from ``loss``."""
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        visited: set[int] = set()
        for out, parents, vjp in reversed(self.nodes):
            key = id(out)
            if key in visited:
                raise RuntimeError("tape contains a cycle or a re-recorded node")
            visited.add(key)
            g = adjoints.get(key)
            if g is None:
                continue
            grads = vjp(g)
            for parent, pg in zip(parents, grads):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=parent.dtype), parent.shape)
                pk = id(parent)
                if pk in adjoints:
                    adjoints[pk] = adjoints[pk] + pg
                else:
                    adjoints[pk] = pg
        return adjoints

    def gradient(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        adj = self.backward(loss)
        return [adj.get(id(t), np.zeros_like(t.data)) for t in wrt]


def backward(tape: GradTape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` for each tensor in ``params``."""
    return tape.gradient(loss, params)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def record(out_data: np.ndarray, parents: Sequence, vjp: Callable) -> Tensor:
    """Wrap ``out_data`` as a Tensor and tape it if any parent needs grad."""
    needs = any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs and bool(_ACTIVE))
    if out.requires_grad:
        _ACTIVE[-1].nodes.append((out, tuple(parents), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _binary_dtype(a, b):
    # python scalars must not upcast float32 tensors
    av, bv = value(a), value(b)
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return av, np.asarray(bv, dtype=av.dtype) if np.ndim(bv) == 0 else bv
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return (np.asarray(av, dtype=bv.dtype) if np.ndim(av) == 0 else av), bv
    return av, bv


def add(a, b) -> Tensor:
    av, bv = _binary_dtype(a, b)
    return record(av + bv, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    av, bv = _binary_dtype(a, b)
    return record(av - bv, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    av, bv = _binary_dtype(a, b)
    return record(av * bv, (a, b), lambda g: (g * bv, g * av))


def square(a) -> Tensor:
    av = value(a)
    return record(av * av, (a,), lambda g: (2 * g * av,))


def matmul(a, b) -> Tensor:
    av, bv = value(a), value(b)

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        # promote vectors to matrices so both adjoints are plain products
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if av.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:]) if ga.ndim > 2 else ga[0]
        if bv.ndim == 1:
            gb = gb[..., 0]
        return ga, gb

    return record(av @ bv, (a, b), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    av = value(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape),)

    return record(np.asarray(av.sum(axis=axis, keepdims=keepdims)), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, av.shape),)

    return record(np.asarray(av.mean(axis=axis, keepdims=keepdims), dtype=av.dtype), (a,), vjp)


def reshape(a, shape) -> Tensor:
    av = value(a)
    return record(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def transpose(a, axes=None) -> Tensor:
    av = value(a)
    inv = None if axes is None else np.argsort(axes)
    return record(np.transpose(av, axes), (a,), lambda g: (np.transpose(g, inv),))


def take(a, index, axis=0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the gradient."""
    av = value(a)
    index = np.asarray(index)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, (slice(None),) * axis + (index,), g)
        return (out,)

    return record(np.take(av, index, axis=axis), (a,), vjp)


def concat(items: Sequence, axis=0) -> Tensor:
    vals = [value(t) for t in items]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return record(np.concatenate(vals, axis=axis), tuple(items), vjp)


def layer_norm(x, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis (no affine parameters)."""
    xv = value(x)
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return record(y.astype(xv.dtype), (x,), vjp)


def softmax(x, axis=-1) -> Tensor:
    xv = value(x)
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return record(p, (x,), vjp)


def silu(x) -> Tensor:
    xv = value(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * xv))  # overflow-free logistic

    def vjp(g):
        return (g * (s + xv * s * (1.0 - s)),)

    return record((xv * s).astype(xv.dtype), (x,), vjp)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Tensor:
    """Tanh-approximated GELU (smooth, so finite differences behave)."""
    xv = value(x)
    inner = _GELU_C * (xv + 0.044715 * xv**3)
    th = np.tanh(inner)
    y = 0.5 * xv * (1.0 + th)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xv**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th * th) * dinner),)

    return record(y.astype(xv.dtype), (x,), vjp)


def mse(pred, target) -> Tensor:
    diff = sub(pred, target)
    return mean(square(diff))
