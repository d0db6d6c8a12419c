"""Tape-free reverse-mode autodiff over numpy arrays.

Each op returns a Tensor that remembers its parents and a closure mapping
the upstream gradient to parent gradients.  `backward` walks the graph in
reverse topological order.  Only the handful of ops the point network needs
are provided.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents", "grad_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = ()
        self.grad_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


def _result(data, parents, grad_fn) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents)
    if any(p.requires_grad for p in live):
        out.requires_grad = True
        out.parents = live
        out.grad_fn = grad_fn
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def affine(x, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b over the last axis of x."""
    x = as_tensor(x)
    xd = x.data
    out = xd @ W.data + b.data

    def grad_fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xd.reshape(-1, xd.shape[-1])
        gx = (g @ W.data.T) if x.requires_grad else None
        return gx, x2.T @ g2, g2.sum(axis=0)

    return _result(out, (x, W, b), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.data.dtype, copy=False), (x,), lambda g: (g * mask,))


def gather(x, idx: np.ndarray) -> Tensor:
    """Rows of a 2-D tensor: out[...] = x[idx[...]]."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    out = x.data[idx]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx.ravel(), g.reshape(-1, x.data.shape[-1]))
        return (gx,)

    return _result(out, (x,), grad_fn)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = np.cumsum([x.data.shape[axis] for x in xs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(out, tuple(xs), grad_fn)


def group_max(x: Tensor) -> Tensor:
    """Channelwise max over axis -2 of an (S, K, C) tensor.

    The subgradient goes to the first (lowest-index) maximizing member.
    """
    arg = np.argmax(x.data, axis=-2)  # (S, C)
    out = np.take_along_axis(x.data, arg[..., None, :], axis=-2)[..., 0, :]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[..., None, :], g[..., None, :], axis=-2)
        return (gx,)

    return _result(out, (x,), grad_fn)


def interpolate(x, idx: np.ndarray, w: np.ndarray) -> Tensor:
    """out[q] = sum_j w[q, j] * x[idx[q, j]] with constant indices and weights."""
    x = as_tensor(x)
    w = np.asarray(w, dtype=x.data.dtype)
    out = np.einsum("qj,qjc->qc", w, x.data[idx])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx.ravel(), (w[..., None] * g[:, None, :]).reshape(-1, g.shape[-1]))
        return (gx,)

    return _result(out, (x,), grad_fn)


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_nll(logits: Tensor, columns: np.ndarray, row_weights: np.ndarray) -> Tensor:
    """sum_i w_i * (-log softmax(z_i)[c_i]) / sum_i w_i over the selected rows."""
    z = logits.data
    rows = np.arange(len(columns))
    logp = log_softmax_np(z)
    wsum = row_weights.sum()
    loss = -(row_weights * logp[rows, columns]).sum() / wsum

    def grad_fn(g):
        p = np.exp(logp)
        p[rows, columns] -= 1.0
        return (g * p * (row_weights / wsum)[:, None],)

    return _result(np.asarray(loss), (logits,), grad_fn)


def select_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    return gather(x, rows)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every tensor that requires it."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad_fn is None or node.grad is None:
            continue
        for p, gp in zip(node.parents, node.grad_fn(node.grad)):
            if gp is None or not p.requires_grad:
                continue
            p.grad = gp if p.grad is None else p.grad + gp
