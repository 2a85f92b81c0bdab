"""Dense tensors with tape-based reverse-mode differentiation.

Only the operations the encoder and decoder need are provided. Every op
builds its output eagerly and, when gradients are enabled and any input
requires them, records a closure that maps the output gradient to input
gradients. ``backward`` walks the recorded graph in reverse topological
order.

Forward matrix products are computed one row at a time (stacked matmul),
so each output row depends only on the matching input row. This makes
results independent of batch composition and row order, at some cost in
speed over a plain BLAS call.
"""

from __future__ import annotations

import contextlib
import json
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = "syngraph-params"
CHECKPOINT_VERSION = 1

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def _rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.matmul(a[:, None, :], b)[:, 0, :]


def matmul(a, b) -> Tensor:
    """Product of an [m x k] and a [k x n] matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(_rowwise_matmul(a.data, b.data), (a, b), backward, "matmul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0

    def backward(g):
        return (g * active,)

    return _result(np.where(active, x.data, 0.0), (x,), backward, "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    pos = x.data >= 0
    z = np.exp(-np.abs(x.data))
    y = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward, "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), backward, "tanh")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def backward(g):
        return (g * y,)

    return _result(y, (x,), backward, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), backward, "log")


# --- shape manipulation ------------------------------------------------------

def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat of an empty list")
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, backward, "concat")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape

    def backward(g):
        return (g.reshape(orig),)

    return _result(x.data.reshape(shape), (x,), backward, "reshape")


def columns(x, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a 2-D tensor."""
    x = as_tensor(x)

    def backward(g):
        out = np.zeros_like(x.data)
        out[:, start:stop] = g
        return (out,)

    return _result(x.data[:, start:stop], (x,), backward, "columns")


def take_rows(x, index) -> Tensor:
    """Gather rows of ``x`` along axis 0; ``index`` may have any integer shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        return (scatter_add_rows(g, index, x.shape),)

    return _result(x.data[index], (x,), backward, "take_rows")


def scatter_add_rows(g: np.ndarray, index: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum the rows of ``g`` into a zero array of ``shape`` at positions ``index``."""
    flat_idx = index.reshape(-1)
    rows = g.reshape((flat_idx.size,) + tuple(shape[1:]))
    out = np.zeros(shape)
    if flat_idx.size == 0:
        return out
    order = np.argsort(flat_idx, kind="stable")
    sorted_idx = flat_idx[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    out[sorted_idx[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def tensor_sum(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    return mul(tensor_sum(x), 1.0 / x.data.size)


# --- pooling -----------------------------------------------------------------

def elementwise_max_rows(m) -> Tensor:
    """Column-wise max over the rows of an [r x d] matrix.

    Backward sends each column's gradient to the first row attaining the max.
    """
    m = as_tensor(m)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError(f"elementwise_max_rows needs at least one row, got shape {m.shape}")
    arg = np.argmax(m.data, axis=0)
    cols = np.arange(m.shape[1])

    def backward(g):
        gm = np.zeros_like(m.data)
        gm[arg, cols] = g
        return (gm,)

    return _result(m.data[arg, cols], (m,), backward, "max_rows")


def masked_max(x, mask) -> Tensor:
    """Max over axis 1 of a [n x r x d] tensor, skipping rows where ``mask`` is False.

    Groups without any valid row produce zeros and receive no gradient.
    Ties go to the lowest valid row index.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    n, r, d = x.shape
    if r == 0:
        return _result(np.zeros((n, d)), (x,), lambda g: (np.zeros_like(x.data),), "masked_max")
    filled = np.where(mask[:, :, None], x.data, -np.inf)
    arg = np.argmax(filled, axis=1)  # [n, d]
    has_any = mask.any(axis=1)
    rows = np.arange(n)[:, None]
    cols = np.arange(d)[None, :]
    out = np.where(has_any[:, None], x.data[rows, arg, cols], 0.0)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, arg, cols] = np.where(has_any[:, None], g, 0.0)
        return (gx,)

    return _result(out, (x,), backward, "masked_max")


def masked_mean(x, mask) -> Tensor:
    """Mean over axis 1 of a [n x r x d] tensor restricted to valid rows."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=np.float64)
    counts = np.maximum(mask.sum(axis=1), 1.0)[:, None]
    weights = (mask / counts)[:, :, None]

    def backward(g):
        return (g[:, None, :] * weights,)

    return _result((x.data * weights).sum(axis=1), (x,), backward, "masked_mean")


# --- distributions -----------------------------------------------------------

def softmax(x, mask=None) -> Tensor:
    """Softmax over the last axis. Entries where ``mask`` is False get probability 0."""
    x = as_tensor(x)
    if x.data.size == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of an empty input")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    # sequential sum: trailing masked zeros never change the normaliser
    y = e / np.cumsum(e, axis=-1)[..., -1:]

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def cross_entropy(dist, target) -> Tensor:
    """Negative log-probability of ``target`` under ``dist``.

    A 1-D distribution with an int target gives a scalar; a [b x v] batch with
    ``b`` targets gives a vector of per-row losses. Probabilities are clamped
    from below at 1e-12; clamped entries pass no gradient.
    """
    dist = as_tensor(dist)
    single = dist.ndim == 1
    probs = dist.data[None, :] if single else dist.data
    target = np.atleast_1d(np.asarray(target, dtype=np.intp))
    if target.shape[0] != probs.shape[0]:
        raise ValueError("one target per distribution row is required")
    vocab = probs.shape[1]
    if np.any(target < 0) or np.any(target >= vocab):
        raise IndexError(f"target out of range for distribution of size {vocab}")
    rows = np.arange(probs.shape[0])
    picked = probs[rows, target]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = -np.log(clamped)

    def backward(g):
        g = np.atleast_1d(g)
        gd = np.zeros_like(probs)
        gd[rows, target] = np.where(picked >= PROB_FLOOR, -g / clamped, 0.0)
        return (gd[0] if single else gd,)

    return _result(loss[0] if single else loss, (dist,), backward, "cross_entropy")


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, keep)


# --- differentiation ---------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Run reverse-mode differentiation from a scalar ``loss``.

    Leaf tensors reached get their ``.grad`` accumulated. When ``params`` is
    given, returns their gradients in order, zeros for any not on the path.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo_order(loss)):
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
                grads[key] = grads[key] + pg if key in grads else pg
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max elementwise relative error between tape gradients and central differences.

    ``f`` must recompute the loss from the current parameter values and be
    deterministic. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    for p in params:
        p.grad = None
    analytic = backward(f(), params)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                denom = max(abs(gflat[i]), abs(numeric), floor)
                worst = max(worst, abs(gflat[i] - numeric) / denom)
    for p in params:
        p.grad = None
    return worst


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]):
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter is required")
        for p, g in zip(self.params, grads):
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- checkpoints -------------------------------------------------------------

def params_to_json(params: dict[str, Tensor], meta: dict | None = None) -> str:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in sorted(params.items())
        },
    }
    return json.dumps(payload, sort_keys=True)


def params_from_json(text: str) -> tuple[dict[str, Tensor], dict]:
    payload = json.loads(text)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a parameter checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    params = {}
    for name, entry in payload["params"].items():
        values = np.asarray(entry["values"], dtype=np.float64)
        params[name] = Tensor(values.reshape(entry["shape"]), requires_grad=True)
    return params, payload.get("meta", {})


def save_params(path, params: dict[str, Tensor], meta: dict | None = None):
    Path(path).write_text(params_to_json(params, meta), encoding="utf-8")


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    return params_from_json(Path(path).read_text(encoding="utf-8"))
