"""Dense-tensor arithmetic with reverse-mode differentiation.

Double precision only. Every operation records its inputs and a backward
closure on a define-by-run graph; `backward` replays the graph in reverse
topological order. Data tensors are either single vectors of shape (n,) or
row-batches of shape (B, n); parameters are matrices (m, n) or vectors (m,).
Bias-style broadcasting of an (m,) tensor against a (B, m) tensor is the one
broadcast admitted; anything else is a shape error.

No NaN or Inf is admitted into the graph: constructors and operations
validate their outputs and raise NumericError naming the offending node.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

__all__ = [
    "Tensor",
    "Parameter",
    "tensor",
    "zeros",
    "affine",
    "linear",
    "concat",
    "narrow",
    "sum_all",
    "mean_all",
    "sigmoid",
    "tanh",
    "relu",
    "log",
    "softmax",
    "pick",
    "weighted_sum",
    "backward",
    "check_unique_names",
]


class Tensor:
    """A node in the computation graph holding a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size and not np.isfinite(arr).all():
            raise NumericError(f"non-finite values entering the graph at node '{op}'")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # Operator sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        """Accumulate d(self)/d(leaf) into the grad of every reachable node.

        Gradients add onto whatever is already stored, so differentiation is
        linear across repeated calls. Use the module-level `backward` for
        zero-then-fill semantics over a parameter set.
        """
        if self.data.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self.grad = np.asarray(1.0)
        for node in reversed(order):
            if node.grad is None or node._backward is None:
                continue
            if not np.isfinite(node.grad).all():
                raise NumericError(f"non-finite gradient at node '{node.op}'")
            node._backward(node.grad)


class Parameter(Tensor):
    """A named trainable tensor with a persistent same-shape gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, op=f"param:{name}")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def tensor(data):
    """Wrap raw values as a constant graph leaf."""
    return Tensor(data)


def zeros(shape):
    return Tensor(np.zeros(shape))


def check_unique_names(params):
    """Raise if two parameters share an identifier."""
    seen = {}
    for p in params:
        if p.name in seen and seen[p.name] is not p:
            raise ContractError(f"duplicate parameter identifier {p.name!r}")
        seen[p.name] = p
    return params


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accum(node, g):
    if not node.requires_grad:
        return
    if g.shape != node.data.shape:
        g = _unbroadcast(g, node.data.shape)
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _make(data, op, parents, backward_fn):
    if not any(p.requires_grad for p in parents):
        return Tensor(data, op=op)
    out = Tensor(data, requires_grad=True, op=op, _parents=tuple(parents), _backward=backward_fn)
    return out


def _unbroadcast(g, shape):
    # Only bias-style broadcast is admitted: (m,) combined with (B, m).
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def _check_addable(a, b, op):
    if a.data.shape == b.data.shape:
        return
    sa, sb = a.data.shape, b.data.shape
    if len(sa) == 2 and sb == sa[1:]:
        return
    if len(sb) == 2 and sa == sb[1:]:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def add(a, b):
    _check_addable(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a, b):
    _check_addable(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a, b):
    _check_addable(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, _unbroadcast(g * bd, ad.shape))
        _accum(b, _unbroadcast(g * ad, bd.shape))

    return _make(ad * bd, "mul", (a, b), bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, "scale", (a,), bw)


def linear(x, W):
    """x @ W.T for x of shape (n,) or (B, n) and weight W of shape (m, n)."""
    if W.data.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-D, got {W.data.shape}")
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != W.data.shape[1]:
        raise DimensionError(
            f"linear: input shape {x.data.shape} does not match weight shape {W.data.shape}"
        )
    xd, Wd = x.data, W.data

    def bw(g):
        if xd.ndim == 1:
            _accum(W, np.outer(g, xd))
            _accum(x, g @ Wd)
        else:
            _accum(W, g.T @ xd)
            _accum(x, g @ Wd)

    return _make(xd @ Wd.T, "linear", (x, W), bw)


def affine(x, W, b):
    """W·x + b with gradient recording; accepts a row-batch in x."""
    if b.data.ndim != 1 or b.data.shape[0] != W.data.shape[0]:
        raise DimensionError(
            f"affine: bias shape {b.data.shape} does not match weight shape {W.data.shape}"
        )
    return add(linear(x, W), b)


def concat(parts):
    """Concatenate along the last axis; leading dimensions must agree."""
    parts = list(parts)
    if not parts:
        raise DomainError("concat of zero tensors")
    lead = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != lead:
            raise DimensionError(
                f"concat: leading dims differ ({p.data.shape} vs {parts[0].data.shape})"
            )
    widths = [p.data.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[..., lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=-1), "concat", parts, bw)


def narrow(x, start, stop):
    """Slice [start:stop) along the last axis."""
    n = x.data.shape[-1]
    if not (0 <= start <= stop <= n):
        raise ContractError(f"narrow: [{start}:{stop}) out of range for width {n}")

    def bw(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[..., start:stop] += g

    return _make(x.data[..., start:stop], "narrow", (x,), bw)


def sum_all(x):
    shape = x.data.shape

    def bw(g):
        _accum(x, np.broadcast_to(g, shape).copy() if shape else g)

    return _make(x.data.sum(), "sum", (x,), bw)


def mean_all(x):
    if x.data.size == 0:
        raise DomainError("mean of an empty tensor")
    return scale(sum_all(x), 1.0 / x.data.size)


def sigmoid(x):
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, "sigmoid", (x,), bw)


def tanh(x):
    out = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - out * out))

    return _make(out, "tanh", (x,), bw)


def relu(x):
    out = np.maximum(x.data, 0.0)

    def bw(g):
        _accum(x, g * (x.data > 0.0))

    return _make(out, "relu", (x,), bw)


def log(x):
    if (x.data <= 0.0).any():
        raise NumericError("log of a non-positive value")
    out = np.log(x.data)
    xd = x.data

    def bw(g):
        _accum(x, g / xd)

    return _make(out, "log", (x,), bw)


def softmax(x):
    """Numerically stabilized softmax over the last axis."""
    if x.data.size == 0 or x.data.shape[-1] == 0:
        raise DomainError("softmax of an empty tensor")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(x, out * (g - dot))

    return _make(out, "softmax", (x,), bw)


def pick(x, index):
    """Select one entry per row: x (C,) with int index, or x (B, C) with an
    index array of length B; returns shape () or (B,)."""
    if x.data.ndim == 1:
        i = int(index)
        if not 0 <= i < x.data.shape[0]:
            raise ContractError(f"pick: index {i} out of range for width {x.data.shape[0]}")

        def bw(g):
            if not x.requires_grad:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[i] += g

        return _make(x.data[i], "pick", (x,), bw)

    idx = np.asarray(index, dtype=np.intp)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise DimensionError(
            f"pick: input shape {x.data.shape} incompatible with index shape {idx.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[1]):
        raise ContractError("pick: index out of range")
    rows = np.arange(x.data.shape[0])

    def bw(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (rows, idx), g)

    return _make(x.data[rows, idx], "pick", (x,), bw)


def weighted_sum(weights, vectors):
    """Sum_t weights[..., t] * vectors[t].

    weights has shape (T,) or (B, T); each vector has shape (d,) or (B, d).
    Used to pool a hidden-state sequence into one context vector.
    """
    vectors = list(vectors)
    T = weights.data.shape[-1]
    if len(vectors) != T:
        raise DimensionError(f"weighted_sum: {len(vectors)} vectors for {T} weights")
    wd = weights.data
    if wd.ndim == 1:
        out = sum(wd[t] * vectors[t].data for t in range(T))

        def bw(g):
            if weights.requires_grad:
                if weights.grad is None:
                    weights.grad = np.zeros_like(wd)
                for t in range(T):
                    weights.grad[t] += float((g * vectors[t].data).sum())
            for t in range(T):
                _accum(vectors[t], g * wd[t])

    else:
        out = sum(wd[:, t : t + 1] * vectors[t].data for t in range(T))

        def bw(g):
            if weights.requires_grad:
                if weights.grad is None:
                    weights.grad = np.zeros_like(wd)
                for t in range(T):
                    weights.grad[:, t] += (g * vectors[t].data).sum(axis=-1)
            for t in range(T):
                _accum(vectors[t], g * wd[:, t : t + 1])

    return _make(out, "weighted_sum", [weights] + vectors, bw)


def backward(loss, params):
    """Populate each parameter's gradient with d(loss)/d(parameter).

    Gradients of the given parameters are zeroed first; parameters that do
    not participate in the loss keep a zero gradient.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        got = getattr(loss, "data", np.asarray(loss)).shape
        raise ContractError(f"backward requires a scalar loss, got shape {got}")
    params = check_unique_names(list(params))
    for p in params:
        p.zero_grad()
    loss.backward()
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient for parameter {p.name!r}")
