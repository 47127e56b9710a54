"""Small reverse-mode autodiff over float64 numpy arrays.

Ops record themselves on the active :class:`Tape`; ``backward`` walks the
tape in reverse creation order, which is a valid reverse topological order.
Elementwise ops broadcast only over one leading batch extent; anything else
needs an explicit :func:`broadcast_to`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "Tensor",
    "Tape",
    "no_tape",
    "backward",
    "custom",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "softmax",
    "log_softmax",
    "logsumexp",
    "layer_norm",
    "embedding",
    "concat",
    "getitem",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "transpose",
    "broadcast_to",
    "l2_normalize",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tape:
    """Ordered record of op applications. Use as a context manager."""

    _stack: list["Tape"] = []

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @staticmethod
    def active() -> "Tape | None":
        return Tape._stack[-1] if Tape._stack else None


class no_tape:
    """Suspend recording (forward-only evaluation inside a taped region)."""

    def __enter__(self):
        self._saved = Tape._stack
        Tape._stack = []

    def __exit__(self, *exc):
        Tape._stack = self._saved


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "name", "op", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.op = None
        self.node_id = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _make(op: str, value: np.ndarray, parents: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op}: non-finite output")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.name = None
    out.op = op
    out.node_id = None
    out._parents = ()
    out._backward = None
    out._tape = None
    out.requires_grad = False
    tape = Tape.active()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
        out._tape = tape
        out.node_id = len(tape.nodes)
        tape.nodes.append(out)
    return out


def custom(op: str, inputs: Sequence[Tensor], value, grad_fn: GradFn) -> Tensor:
    """Register a node whose input gradients come from ``grad_fn(grad_out)``.

    Used by the lattice losses so their DP loops are never taped.
    """
    return _make(op, np.asarray(value, dtype=np.float64), tuple(inputs), grad_fn)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` for every leaf that requires grad."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    leaves: dict[Tensor, np.ndarray] = {}
    if loss._backward is None:
        if loss.requires_grad:
            leaves[loss] = np.ones_like(loss.data)
        return leaves
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    nodes = loss._tape.nodes
    for node in reversed(nodes[: loss.node_id + 1]):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"{node.op}: non-finite gradient")
            if parent._backward is None:
                if parent in leaves:
                    leaves[parent] = leaves[parent] + pg
                else:
                    leaves[parent] = np.array(pg, dtype=np.float64)
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    return leaves


# ---------------------------------------------------------------- elementwise


def _bshape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
        return
    if b.ndim == a.ndim + 1 and b.shape[1:] == a.shape:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _bshape("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _bshape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _bshape("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ok = (a.ndim == 2 and b.ndim == 2) or (a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0])
    ok = ok and a.shape[-1] == b.shape[-2]
    if not ok:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def grad(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _make("matmul", a.data @ b.data, (a, b), grad)


# ---------------------------------------------------------------- normalizers


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (a,), grad)


def _lse(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def log_softmax(a: Tensor) -> Tensor:
    y = a.data - _lse(a.data)

    def grad(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (a,), grad)


def logsumexp(a: Tensor) -> Tensor:
    lse = _lse(a.data)
    p = np.exp(a.data - lse)
    return _make("logsumexp", lse[..., 0], (a,), lambda g: (g[..., None] * p,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: shapes {x.shape} and {gain.shape} do not conform")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def grad(g):
        gx = g * gain.data
        n = x.shape[-1]
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", xhat * gain.data + bias.data, (x, gain, bias), grad)


def l2_normalize(x: Tensor) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if (norm == 0).any():
        raise ValueError("l2_normalize: zero-norm row, cosine similarity undefined")
    y = x.data / norm

    def grad(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _make("l2_normalize", y, (x,), grad)


# ---------------------------------------------------------------- indexing and shape


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or (ids.size and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise ShapeError(f"embedding: ids out of range for table {table.shape}")

    def grad(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return _make("embedding", table.data[ids], (table,), grad)


def getitem(x: Tensor, key) -> Tensor:
    def grad(g):
        out = np.zeros_like(x.data)
        np.add.at(out, key, g)
        return (out,)

    return _make("getitem", np.array(x.data[key]), (x,), grad)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if p.ndim != len(ref) or p.shape[:ax] + p.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: shapes {ref} and {p.shape} do not conform")
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]
    return _make("concat", np.concatenate([p.data for p in parts], axis=ax), parts,
                 lambda g: tuple(np.split(g, bounds, axis=ax)))


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return _make("reduce_sum", np.array(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, x.shape).copy(),))
    return _make("reduce_sum", x.data.sum(axis=axis), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),))


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    shape = tuple(shape)
    try:
        value = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: shapes {x.shape} and {shape} do not conform") from None
    lead = len(shape) - x.ndim
    keep = tuple(i + lead for i, n in enumerate(x.shape) if n == 1 and shape[i + lead] != 1)

    def grad(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        if keep:
            g = g.sum(axis=tuple(k - lead for k in keep), keepdims=True)
        return (g,)

    return _make("broadcast_to", value, (x,), grad)


# ---------------------------------------------------------------- gradient checking


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5,
               floor: float | None = None) -> float:
    """Max relative error between the taped gradient and central differences.

    ``f`` maps a Tensor to a scalar Tensor. The relative error per coordinate
    is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. By default
    ``floor`` is ``1e-6 * max(1, |f(point)|)``: central differences carry
    round-off near ``eps * |f| / step``, so smaller gradient entries are
    compared on that absolute scale instead.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0, requires_grad=True)
    with Tape():
        out = f(x)
        analytic = backward(out).get(x, np.zeros_like(x0))
    if floor is None:
        floor = 1e-6 * max(1.0, abs(out.item()))
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    with no_tape():
        for i in range(x0.size):
            xp = x0.copy().reshape(-1)
            xm = x0.copy().reshape(-1)
            xp[i] += step
            xm[i] -= step
            fp = f(Tensor(xp.reshape(x0.shape))).item()
            fm = f(Tensor(xm.reshape(x0.shape))).item()
            flat[i] = (fp - fm) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if x0.size else 0.0
