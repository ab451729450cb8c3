"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array plus an implicit tape: every op that touches a
tensor requiring gradients records its parents and a closure that maps the
output adjoint to parent adjoints. backward() on a scalar walks the graph in
reverse topological order and accumulates gradients additively into the
leaf tensors' .grad buffers.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_backward_done")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # -- graph plumbing -----------------------------------------------------

    def _in_graph(self):
        return self.requires_grad or bool(self._parents)

    def backward(self):
        if self.size != 1:
            raise ShapeMismatchError(
                f"backward requires a scalar loss, got shape {self.shape}")
        if not self._in_graph():
            raise RuntimeError("backward called with no active gradient tape")
        if self._backward_done:
            raise RuntimeError(
                "backward already called on this tape; re-run the forward pass")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p._in_graph():
                    stack.append((p, False))

        adjoint = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward_fn is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward_fn is not None:
                parent_grads = node._backward_fn(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p._in_graph():
                        continue
                    if id(p) in adjoint:
                        adjoint[id(p)] += pg
                    else:
                        adjoint[id(p)] = pg
        self._backward_done = True

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def reshape(self, *shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    if any(p._in_graph() for p in parents):
        return Tensor(data, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _check_same_or_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"{opname}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise ops ---------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_broadcast(a, b, "add")
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_broadcast(a, b, "sub")
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_broadcast(a, b, "mul")
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0
    return _make(out, (a,), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    # stable form: max(x, 0) + log1p(exp(-|x|))
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * sig,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(
            f"log of non-positive input (min={a.data.min():.6g})")
    out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative input")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


# -- reductions & structure ---------------------------------------------------

def sum_axis(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean_axis(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return sum_axis(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm of the flattened tensor (scalar output)."""
    nrm = float(np.linalg.norm(a.data))
    if nrm == 0.0:
        raise DomainError("l2_norm of a zero tensor has no gradient")
    return _make(np.float64(nrm), (a,), lambda g: (g * a.data / nrm,))


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatchError(f"transpose expects a matrix, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data
    return _make(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def conv1d(x: Tensor, kernel: Tensor, padding: int = 0) -> Tensor:
    """Cross-correlation of x[B,C,L] with kernel[C_out,C,W], zero padding."""
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeMismatchError(
            f"conv1d expects x[B,C,L], kernel[C_out,C,W]; "
            f"got {x.shape} and {kernel.shape}")
    B, C, L = x.shape
    C_out, C_k, W = kernel.shape
    if C_k != C:
        raise ShapeMismatchError(
            f"conv1d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    L_out = L + 2 * padding - W + 1
    if L_out < 1:
        raise ShapeMismatchError(
            f"conv1d kernel width {W} exceeds padded length {L + 2 * padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    out = np.zeros((B, C_out, L_out))
    for w in range(W):
        out += np.einsum("bcl,oc->bol", xp[:, :, w:w + L_out], kernel.data[:, :, w])

    def backward(g):
        gk = np.empty_like(kernel.data)
        gxp = np.zeros_like(xp)
        for w in range(W):
            gk[:, :, w] = np.einsum("bol,bcl->oc", g, xp[:, :, w:w + L_out])
            gxp[:, :, w:w + L_out] += np.einsum("bol,oc->bcl", g,
                                                kernel.data[:, :, w])
        gx = gxp[:, :, padding:padding + L] if padding else gxp
        return (gx, gk)

    return _make(out, (x, kernel), backward)
