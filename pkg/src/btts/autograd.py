"""A small tape-free reverse-mode autodiff over numpy arrays.

Each :class:`Tensor` remembers its parents and a closure that pushes the
output gradient back to them. ``Tensor.backward`` walks the graph in
reverse topological order. Only the operations the synthesis network
needs are provided; several of them (GRU step, conv1d, batch norm) are
fused, with hand-derived backward rules, to keep the graph small.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents: Tuple["Tensor", ...] = (),
                 backward_fn: Optional[Callable[[np.ndarray], None]] = None,
                 requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else grad
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)
                if node.parents:
                    node.grad = None  # free interior gradients as we go

    # operator sugar
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def leaf(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(data, parents, fn):
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, parents, fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    def fn(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))
    return _node(a.data + b.data, (a, b), fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def fn(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))
    return _node(a.data - b.data, (a, b), fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def fn(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D @ 2-D, or 2-D @ 1-D."""
    def fn(g):
        if b.data.ndim == 1:
            if a.requires_grad:
                a.accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b.accumulate(a.data.T @ g)
            return
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)
    return _node(a.data @ b.data, (a, b), fn)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w + b for x of shape (T, in)."""
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def fn(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))
    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, fn)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: x.accumulate(g * (1.0 - y * y)))


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _node(y, (x,), lambda g: x.accumulate(g * y * (1.0 - y)))


def relu(x: Tensor) -> Tensor:
    """max(x, 0); at exactly 0 the symmetric subgradient 1/2 is used."""
    slope = (x.data > 0) + 0.5 * (x.data == 0)
    return _node(np.maximum(x.data, 0), (x,), lambda g: x.accumulate(g * slope))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for overflow safety."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        x.accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))
    return _node(y, (x,), fn)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def fn(g):
        for p, piece in zip(parts, np.split(g, sizes, axis=axis)):
            if p.requires_grad:
                p.accumulate(piece)
    return _node(data, tuple(parts), fn)


def getitem(x: Tensor, idx) -> Tensor:
    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        x.accumulate(full)
    return _node(x.data[idx], (x,), fn)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table.accumulate(full)
    return _node(table.data[ids], (table,), fn)


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: x.accumulate(g.reshape(x.shape)))


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Concatenate (1, d) rows into a (n, d) matrix."""
    return concat(rows, axis=0)


def mean_abs_error(pred: Tensor, target: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean |pred - target| over the rows selected by ``mask`` (all rows by default).

    The subgradient at zero error is taken as 0.
    """
    diff = pred.data - target
    if mask is None:
        mask = np.ones(diff.shape[0], dtype=bool)
    weights = mask.astype(diff.dtype)[:, None]
    count = max(1.0, float(weights.sum()) * diff.shape[1])
    value = np.sum(np.abs(diff) * weights) / count

    def fn(g):
        pred.accumulate(g * np.sign(diff) * weights / count)
    return _node(np.asarray(value), (pred,), fn)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: x.accumulate(g * keep))


def gru_step(xw: Tensor, h: Tensor, u_gates: Tensor, u_cand: Tensor) -> Tensor:
    """One GRU update for a single row.

    ``xw`` is the (1, 3H) input projection ``x @ W + b`` laid out as
    [update z | reset r | candidate]. Then

        z = sigmoid(xw_z + h @ U_z),  r = sigmoid(xw_r + h @ U_r)
        cand = tanh(xw_c + (r * h) @ U_c)
        h' = (1 - z) * h + z * cand
    """
    H = h.shape[-1]
    xd, hd = xw.data, h.data
    gates = _sigmoid(xd[:, :2 * H] + hd @ u_gates.data)
    z, r = gates[:, :H], gates[:, H:]
    rh = r * hd
    cand = np.tanh(xd[:, 2 * H:] + rh @ u_cand.data)
    out = (1.0 - z) * hd + z * cand

    def fn(g):
        dz = g * (cand - hd)
        da_c = g * z * (1.0 - cand * cand)
        drh = da_c @ u_cand.data.T
        dr = drh * hd
        da_g = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        if xw.requires_grad:
            xw.accumulate(np.concatenate([da_g, da_c], axis=1))
        if u_cand.requires_grad:
            u_cand.accumulate(rh.T @ da_c)
        if u_gates.requires_grad:
            u_gates.accumulate(hd.T @ da_g)
        if h.requires_grad:
            h.accumulate(g * (1.0 - z) + drh * r + da_g @ u_gates.data.T)
    return _node(out, (xw, h, u_gates, u_cand), fn)


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """'Same' 1-D convolution over time.

    x: (T, C_in); w: (k, C_in, C_out). Left padding is (k-1)//2, the
    rest goes on the right, so the output keeps length T.
    """
    k, cin, cout = w.shape
    T = x.shape[0]
    left = (k - 1) // 2
    xp = np.zeros((T + k - 1, cin), dtype=x.data.dtype)
    xp[left:left + T] = x.data
    cols = np.concatenate([xp[j:j + T] for j in range(k)], axis=1)
    w2 = w.data.reshape(k * cin, cout)
    out = cols @ w2
    if b is not None:
        out = out + b.data

    def fn(g):
        if w.requires_grad:
            w.accumulate((cols.T @ g).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))
        if x.requires_grad:
            dcols = g @ w2.T
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[j:j + T] += dcols[:, j * cin:(j + 1) * cin]
            x.accumulate(dxp[left:left + T])
    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, fn)


def maxpool_same2(x: Tensor) -> Tensor:
    """Max over a width-2, stride-1 window; the last step sees only itself.

    Ties share the gradient equally between the two inputs.
    """
    nxt = np.concatenate([x.data[1:], x.data[-1:]], axis=0)
    to_next = (nxt > x.data) + 0.5 * (nxt == x.data)
    to_next[-1] = 0.0
    out = np.maximum(x.data, nxt)

    def fn(g):
        d = g * (1.0 - to_next)
        d[1:] += (g * to_next)[:-1]
        x.accumulate(d)
    return _node(out, (x,), fn)


BN_EPS = 1e-5


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.9,
               update_stats: bool = True) -> Tensor:
    """Batch normalization over the time axis of a (T, C) matrix.

    In training mode the statistics of ``x`` are used (and folded into the
    running estimates in place when ``update_stats``); otherwise the running
    estimates are.
    """
    xd = x.data
    if training:
        mu = xd.mean(axis=0)
        var = xd.var(axis=0)
        if update_stats:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (xd - mu) * inv
    out = gamma.data * xhat + beta.data

    def fn(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            if training:
                n = xd.shape[0]
                gx = inv / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                gx = gx * inv
            x.accumulate(gx)
    return _node(out, (x, gamma, beta), fn)
