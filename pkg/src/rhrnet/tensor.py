"""Dense tensors with a small reverse-mode gradient tape.

A :class:`Tensor` wraps a numpy array.  Operations in this module build a
graph only when at least one operand requires a gradient, so inference runs
without any bookkeeping.  Binary operations never broadcast; the one
exception is :func:`add_bias`, which adds a feature vector along the last
axis.

Float arrays keep their precision (float32 by default, float64 for gradient
checks); anything else is converted to float32.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float32

# Named collection of parameter arrays; dict preserves insertion order.
ParameterSet = dict


def _as_array(x, dtype=None) -> np.ndarray:
    arr = np.asarray(x)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> "Tensor":
        """Create the result of an operation.

        ``backward`` maps the output gradient to one gradient (or ``None``)
        per parent.  It is only kept when some parent needs a gradient.
        """
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf on the tape."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype)


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


# -- arithmetic ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor.from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor.from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return Tensor.from_op(s, (a,), lambda g: (g * s * (1 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return Tensor.from_op(t, (a,), lambda g: (g * (1 - t * t),))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch ``add``, ``sub``, ``mul``, ``sigmoid`` or ``tanh`` by name."""
    if kind in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{kind} takes one operand, got {len(args)}")
        return _UNARY[kind](args[0])
    if kind in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{kind} takes two operands, got {len(args)}")
        return _BINARY[kind](*args)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def add_bias(x, b) -> Tensor:
    """x[..., F] + b[F]."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match features of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return Tensor.from_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return Tensor.from_op(np.asarray(a.data.sum()), (a,),
                          lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(total(a), 1.0 / a.data.size)


# -- data movement ---------------------------------------------------------

def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return Tensor.from_op(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(old),))


def flip_time(a) -> Tensor:
    """Reverse the time axis of a [..., T, F] tensor."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"flip_time needs [..., T, F], got {a.shape}")
    return Tensor.from_op(np.flip(a.data, axis=-2).copy(), (a,),
                          lambda g: (np.flip(g, axis=-2).copy(),))


def slice_features(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    F = a.shape[-1]
    if not 0 <= start <= stop <= F:
        raise DimensionError(f"feature slice [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return Tensor.from_op(a.data[..., start:stop].copy(), (a,), back)


def concat_features(a, b) -> Tensor:
    """Per-time-step concatenation, ``a``'s features first."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim < 2 or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_features: time extents of {a.shape} and {b.shape} differ")
    k = a.shape[-1]
    return Tensor.from_op(np.concatenate([a.data, b.data], axis=-1), (a, b),
                          lambda g: (g[..., :k], g[..., k:]))


def split_features(x, first: int) -> tuple[Tensor, Tensor]:
    """Inverse of :func:`concat_features`: split off the first ``first`` features."""
    x = as_tensor(x)
    return slice_features(x, 0, first), slice_features(x, first, x.shape[-1])


# -- gradients -------------------------------------------------------------

def value_and_gradients(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
                        params: Mapping[str, np.ndarray],
                        dtype=None) -> tuple[float, ParameterSet]:
    """Evaluate ``loss_fn`` on taped copies of ``params`` and differentiate it.

    Parameters that do not influence the loss get zero gradients.
    """
    leaves = {name: Tensor(value, dtype, requires_grad=True) for name, value in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"loss must be a scalar Tensor, got {shape}")
    loss.backward()
    grads = ParameterSet()
    for name, leaf in leaves.items():
        grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return float(loss.data), grads


def gradients(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
              params: Mapping[str, np.ndarray], dtype=None) -> ParameterSet:
    return value_and_gradients(loss_fn, params, dtype)[1]


def numeric_gradients(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
                      params: Mapping[str, np.ndarray], step: float = 1e-5,
                      names: Iterable[str] | None = None) -> ParameterSet:
    """Central finite differences of ``loss_fn`` in float64, one element at a time.

    Only practical for small parameter sets; the model-level check lives in
    :mod:`rhrnet.gradcheck`.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = ParameterSet()
    for name in (names if names is not None else base):
        arr = base[name]
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = float(loss_fn({k: Tensor(v) for k, v in base.items()}).data)
            flat[j] = orig - step
            down = float(loss_fn({k: Tensor(v) for k, v in base.items()}).data)
            flat[j] = orig
            gflat[j] = (up - down) / (2 * step)
        out[name] = g
    return out
