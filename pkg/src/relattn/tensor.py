"""Minimal dense-tensor core with reverse-mode differentiation.

Everything is float64 and row-major. Tensors are immutable values; an
operation returns a new Tensor that remembers its parents and a local
backward rule, so a scalar loss can be differentiated with `backward`.
`finite_diff_grad` is the independent central-difference oracle used to
validate the analytic gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible."""


class MaskedRowError(ValueError):
    """Raised when a softmax row is entirely masked out."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense 64-bit real array plus optional autograd bookkeeping.

    `parents` and `backward_rule` are set only on results of operations;
    leaves created with requires_grad=True receive their gradient in
    `.grad` after a backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_rule")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_rule: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], rule) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad or p.backward_rule is not None for p in parents):
            out.requires_grad = True
            out.parents = parents
            out.backward_rule = rule
        return out

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    # ---- elementwise arithmetic ------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        data = self.data + other.data
        a_shape, b_shape = self.shape, other.shape

        def rule(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._from_op(data, (self, other), rule)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        data = self.data - other.data
        a_shape, b_shape = self.shape, other.shape

        def rule(g):
            return _unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)

        return Tensor._from_op(data, (self, other), rule)

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        data = self.data * other.data
        a, b = self, other

        def rule(g):
            return (_unbroadcast(g * b.data, a.shape),
                    _unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(data, (self, other), rule)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        data = self.data / other.data
        a, b = self, other

        def rule(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(data, (self, other), rule)

    # ---- structural ops ---------------------------------------------------

    def reshape(self, shape) -> "Tensor":
        # np.reshape returns a view (no copy) when the data is contiguous.
        data = self.data.reshape(shape)
        old_shape = self.shape

        def rule(g):
            return (g.reshape(old_shape),)

        return Tensor._from_op(data, (self,), rule)

    def transpose(self, axes) -> "Tensor":
        axes = tuple(axes)
        data = np.transpose(self.data, axes)
        inv = tuple(np.argsort(axes))

        def rule(g):
            return (np.transpose(g, inv),)

        return Tensor._from_op(data, (self,), rule)

    def __getitem__(self, idx) -> "Tensor":
        data = self.data[idx]
        shape = self.shape

        def rule(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._from_op(data, (self,), rule)

    # ---- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def rule(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g_exp = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g_exp, shape).copy(),)

        return Tensor._from_op(data, (self,), rule)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ---- nonlinearity -----------------------------------------------------

    def relu(self) -> "Tensor":
        data = np.maximum(self.data, 0.0)
        mask = self.data > 0.0

        def rule(g):
            return (g * mask,)

        return Tensor._from_op(data, (self,), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product: trailing two axes contract, leading axes
    broadcast (or iterate) per numpy matmul semantics."""
    a, b = Tensor._coerce(a), Tensor._coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(
            f"matmul needs rank>=2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner extents differ: {a.shape} vs {b.shape}")
    data = np.matmul(a.data, b.data)

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(data, (a, b), rule)


def softmax_rows(m: Tensor) -> Tensor:
    """Softmax along the last axis with max-subtraction. Entries may be
    -inf (masked), but a fully masked row is an error."""
    m = Tensor._coerce(m)
    if m.ndim < 2:
        raise ShapeMismatchError(f"softmax_rows needs rank>=2, got {m.shape}")
    row_max = m.data.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(row_max)):
        raise MaskedRowError("softmax row has every entry masked (-inf)")
    exp = np.exp(m.data - row_max)
    data = exp / exp.sum(axis=-1, keepdims=True)
    s = data

    def rule(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return Tensor._from_op(data, (m,), rule)


def log_softmax_rows(m: Tensor) -> Tensor:
    """Log-softmax along the last axis, numerically stable."""
    m = Tensor._coerce(m)
    row_max = m.data.max(axis=-1, keepdims=True)
    shifted = m.data - row_max
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    s = np.exp(data)

    def rule(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(data, (m,), rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    x, gain, bias = map(Tensor._coerce, (x, gain, bias))
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape}, {bias.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    data = xhat * gain.data + bias.data

    def rule(g):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gain.data
        dx = inv_std * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return Tensor._from_op(data, (x, gain, bias), rule)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Look up rows of a 2-D table; output shape = indices.shape + [d].
    The backward pass scatter-adds into the table."""
    table = Tensor._coerce(table)
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ShapeMismatchError(f"gather_rows table must be 2-D, got {table.shape}")
    n_rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        bad = idx.flat[np.argmax((idx < 0) | (idx >= n_rows))]
        raise IndexError(f"gather_rows index {bad} out of range [0, {n_rows})")
    data = table.data[idx]
    shape = table.shape

    def rule(g):
        # scatter-add; np.add.at is slow, so sum per row when the index
        # alphabet is small (edge labels, small vocabularies)
        flat_idx = idx.reshape(-1)
        flat_g = g.reshape(-1, shape[1])
        out = np.zeros(shape)
        if shape[0] <= 64:
            present = np.bincount(flat_idx, minlength=shape[0]) > 0
            for row in np.nonzero(present)[0]:
                out[row] = flat_g[flat_idx == row].sum(axis=0)
        else:
            np.add.at(out, flat_idx, flat_g)
        return (out,)

    return Tensor._from_op(data, (table,), rule)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack tensors of identical shape along a new axis."""
    tensors = [Tensor._coerce(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(data, tuple(tensors), rule)


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss. Leaf tensors created with
    requires_grad=True receive their accumulated gradient in `.grad`
    (summed over all paths); intermediate nodes keep none."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [loss]
    # iterative DFS: a node is appended after all its parents
    pending: list[tuple[Tensor, bool]] = [(loss, False)]
    while pending:
        node, expanded = pending.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        pending.append((node, True))
        for p in node.parents:
            if id(p) not in seen and (p.requires_grad or p.backward_rule is not None):
                pending.append((p, False))
    del stack_

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_rule is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node.backward_rule(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not (parent.requires_grad or parent.backward_rule is not None):
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+eps e_i) - f(x-eps e_i)) / 2eps."""
    if eps <= 0:
        raise ValueError("finite_diff_grad eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + eps
        fp = f(x)
        xf[i] = orig - eps
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * eps)
    return grad
