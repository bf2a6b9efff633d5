"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The tape is a module-level list rebuilt on every forward pass; ``backward``
walks it in reverse and clears it. All values are checked for finiteness at
op boundaries so NaN/Inf surfaces where it is produced, not three losses
later.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.sparse import spmatrix
from scipy.special import erf

LAYER_NORM_EPS = 1e-5
_COSINE_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform to the op's contract."""


class NumericError(ValueError):
    """A non-finite value crossed an op boundary."""


class ContractError(RuntimeError):
    """An op precondition (other than shape/finiteness) was violated."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """A contiguous row-major float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_tape_entry")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        _check_finite(arr, "tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(arr) if requires_grad else None
        )
        self._tape_entry: Optional[_TapeNode] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a scalar tensor")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic, all routed through the taped ops below
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class _TapeNode:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


_TAPE: list[_TapeNode] = []
_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def tape_size() -> int:
    return len(_TAPE)


def clear_tape() -> None:
    for node in _TAPE:
        node.output._tape_entry = None
    _TAPE.clear()


def _record(inputs: Sequence[Tensor], out_data: np.ndarray,
            backward_fn) -> Tensor:
    _check_finite(out_data, "op output")
    needs = _GRAD_ENABLED and any(
        t.requires_grad or t._tape_entry is not None for t in inputs
    )
    out = Tensor(out_data, requires_grad=False)
    if needs:
        node = _TapeNode(inputs, out, backward_fn)
        out._tape_entry = node
        _TAPE.append(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc
    return _record([a, b], out, lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from exc
    return _record([a, b], out, lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc
    return _record([a, b], out, lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}") from exc
    return _record([a, b], out, lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    if not math.isfinite(c):
        raise NumericError("scale: non-finite scalar")
    return _record([a], a.data * c, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ShapeError("matmul requires at least 1-d operands")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        if a.data.ndim == 2 and b.data.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.data.ndim == 1 and b.data.ndim == 2:
            return g @ b.data.T, np.outer(a.data, g)
        if a.data.ndim == 2 and b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.data.ndim == 1 and b.data.ndim == 1:
            return g * b.data, g * a.data
        raise ShapeError("matmul backward: unsupported rank combination")

    return _record([a, b], out, backward)


def spmm(a_sparse: spmatrix, b: Tensor) -> Tensor:
    """Multiply a *constant* sparse matrix with a dense tensor."""
    csr = a_sparse.tocsr()
    out = csr @ b.data
    csr_t = csr.T.tocsr()
    return _record([b], out, lambda g: (csr_t @ g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record([a], a.data * mask, lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    out = x * cdf
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _record([a], out, lambda g: (g * (cdf + x * pdf),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record([a], out, lambda g: (g * (1.0 - out * out),))


def identity(a: Tensor) -> Tensor:
    return _record([a], a.data.copy(), lambda g: (g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    _check_finite(out, "exp output")
    return _record([a], out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive input")
    return _record([a], np.log(a.data), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.data)
    return _record([a], out, lambda g: (g * 0.5 / np.maximum(out, 1e-300),))


def _reduce_backward_shape(shape, axis, keepdims, g):
    if axis is None:
        return np.broadcast_to(g, shape).copy() if keepdims or g.ndim == 0 \
            else np.full(shape, g)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _record([a], out, lambda g: (
        _reduce_backward_shape(a.shape, axis, keepdims, g),))


def tmean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.shape[axis]
    return _record([a], out, lambda g: (
        _reduce_backward_shape(a.shape, axis, keepdims, g) / count,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes do not align: "
                         f"{[t.shape for t in tensors]}") from exc
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(list(tensors), out, backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _record([a], out, backward)


def layer_norm(a: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Standardize over the last axis; no learned affine."""
    x = a.data
    if x.ndim == 0:
        raise ShapeError("layer_norm requires at least 1-d input")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv

    def backward(g):
        d = x.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _record([a], xhat, backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity reducing the last axis; broadcasts leading axes."""
    xa, xb = np.broadcast_arrays(a.data, b.data)
    dot = (xa * xb).sum(axis=-1)
    na = np.sqrt((xa * xa).sum(axis=-1))
    nb = np.sqrt((xb * xb).sum(axis=-1))
    denom = np.maximum(na * nb, _COSINE_EPS)
    out = dot / denom

    def backward(g):
        g = np.asarray(g)
        ge = g[..., None]
        na_safe = np.maximum(na, _COSINE_EPS)[..., None]
        nb_safe = np.maximum(nb, _COSINE_EPS)[..., None]
        d = denom[..., None]
        c = out[..., None]
        ga = ge * (xb / d - c * xa / (na_safe * na_safe))
        gb = ge * (xa / d - c * xb / (nb_safe * nb_safe))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record([a, b], out, backward)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of ``table``; backward scatter-adds into the table grad."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim < 1:
        raise ShapeError("embedding_lookup table must be at least 1-d")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("embedding_lookup: index out of range")
    out = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record([table], out, backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _record([a], out, lambda g: (g.reshape(a.shape),))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data >= floor
    return _record([a], np.maximum(a.data, floor), lambda g: (g * mask,))


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# ---------------------------------------------------------------------------
# string-dispatched surface

_UNARY = {
    "relu": relu, "gelu": gelu, "tanh": tanh, "log": log, "exp": exp,
    "layer_norm": layer_norm, "softmax": softmax, "mean": tmean, "sum": tsum,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name.

    Supported kinds: matmul, add, scale, relu, gelu, tanh, layer_norm,
    softmax, log, exp, mean, sum, concat, cosine_similarity,
    embedding_lookup.
    """
    if kind in _UNARY:
        return _UNARY[kind](*inputs, **kwargs)
    if kind == "matmul":
        return matmul(*inputs)
    if kind == "add":
        return add(*inputs)
    if kind == "scale":
        return scale(*inputs, **kwargs)
    if kind == "concat":
        return concat(list(inputs), **kwargs)
    if kind == "cosine_similarity":
        return cosine_similarity(*inputs)
    if kind == "embedding_lookup":
        return embedding_lookup(*inputs)
    raise ValueError(f"unknown op kind: {kind!r}")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "gelu": gelu,
    "tanh": tanh,
    "identity": identity,
}


# ---------------------------------------------------------------------------
# reverse pass


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(ancestor) into every requires_grad ancestor.

    ``root`` must be a scalar produced by taped ops. The tape is cleared
    afterwards, whether or not the walk succeeds.
    """
    if root.data.size != 1:
        raise ContractError("backward root must be a scalar")
    try:
        # mark the subgraph that actually feeds the root
        reachable: set[int] = set()
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in reachable:
                continue
            reachable.add(id(t))
            if t._tape_entry is not None:
                stack.extend(t._tape_entry.inputs)

        grads: dict[int, np.ndarray] = {
            id(root): np.ones_like(root.data)}
        for node in reversed(_TAPE):
            out_id = id(node.output)
            if out_id not in grads or id(node.output) not in reachable:
                continue
            in_grads = node.backward_fn(grads[out_id])
            for inp, g in zip(node.inputs, in_grads):
                if g is None:
                    continue
                if inp.requires_grad:
                    inp.grad += g
                if inp._tape_entry is not None:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = np.array(g, copy=True)
        if root.requires_grad:
            root.grad += np.ones_like(root.data)
    finally:
        clear_tape()
