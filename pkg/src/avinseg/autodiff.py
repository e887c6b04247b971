"""Dense float64 tensors with tape-based reverse-mode differentiation.

Graphs are define-by-run: every operation records its parent tensors and a
closure that routes the output gradient back to them. ``Tensor.backward`` on
a scalar walks the recorded graph once in reverse topological order, so each
node's closure fires exactly once with its fully accumulated gradient.

The op set is deliberately small: matmul, add, mul, scale, div, power, log,
concat, slice, transpose, softmax, sigmoid, relu, layernorm, sum/mean
reductions and an embedding (row gather) lookup. Everything else in the
package is composed from these.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAYERNORM_EPS = 1e-5
# Sigmoid inputs are clamped so downstream log(p) / log(1 - p) stay finite.
SIGMOID_CLAMP = 30.0
_LOG_FLOOR = 1e-300


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class ArityError(ValueError):
    """backward() was called on a non-scalar tensor."""


class EvaluationError(RuntimeError):
    """A checked function produced a non-finite value."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ArityError(f"item() expects a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph traversal ----------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every requires_grad ancestor of this scalar."""
        if self.data.size != 1:
            raise ArityError(f"backward() expects a scalar output, got shape {self.data.shape}")
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def slice(self, start: int, stop: int, axis: int = 0):
        return narrow(self, start, stop, axis=axis)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _topo_order(root: Tensor) -> list[Tensor]:
    """Deterministic post-order over the subgraph that requires grad."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to the given (broadcast-source) shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- primitive ops ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    out_data = a.data @ b.data

    def grad_fn(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _from_op(out_data, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def grad_fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _from_op(out_data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def grad_fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _from_op(out_data, (a, b), grad_fn)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def grad_fn(g):
        _accum(a, g * s)

    return _from_op(a.data * s, (a,), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def grad_fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _from_op(out_data, (a, b), grad_fn)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out_data = a.data**p

    def grad_fn(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    return _from_op(out_data, (a,), grad_fn)


def log(a: Tensor) -> Tensor:
    # Floor keeps an exact 0 from producing -inf; callers only feed outputs
    # of clamped sigmoid / softmax, which stay far above the floor.
    clamped = np.maximum(a.data, _LOG_FLOOR)
    out_data = np.log(clamped)

    def grad_fn(g):
        _accum(a, g / clamped)

    return _from_op(out_data, (a,), grad_fn)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _from_op(out_data, tuple(tensors), grad_fn)


def narrow(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    index = [np.s_[:]] * a.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)
    out_data = a.data[index].copy()

    def grad_fn(g):
        buf = np.zeros_like(a.data)
        buf[index] = g
        _accum(a, buf)

    return _from_op(out_data, (a,), grad_fn)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got shape {a.shape}")

    def grad_fn(g):
        _accum(a, g.T)

    return _from_op(a.data.T.copy(), (a,), grad_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, (g - inner) * out_data)

    return _from_op(out_data, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = np.clip(a.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    out_data = 1.0 / (1.0 + np.exp(-x))
    inside = np.abs(a.data) < SIGMOID_CLAMP

    def grad_fn(g):
        _accum(a, g * out_data * (1.0 - out_data) * inside)

    return _from_op(out_data, (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def grad_fn(g):
        _accum(a, g * mask)

    return _from_op(a.data * mask, (a,), grad_fn)


def layernorm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Zero-mean unit-variance along the last axis, then affine."""
    d = a.shape[-1]
    if gain.shape[-1] != d or bias.shape[-1] != d:
        raise ShapeError(
            f"layernorm: gain {gain.shape} / bias {bias.shape} do not match last axis of {a.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def grad_fn(g):
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(a, inv * (dxhat - m1 - xhat * m2))
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.shape))

    return _from_op(out_data, (a, gain, bias), grad_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape))

    return _from_op(out_data, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.shape[axis]

    def grad_fn(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g / n, a.shape))

    return _from_op(out_data, (a,), grad_fn)


def grid_pool2(a: Tensor, h: int, w: int) -> Tensor:
    """2x2 mean pooling over an h x w grid flattened row-major along axis 0."""
    if h % 2 or w % 2:
        raise ShapeError(f"grid_pool2 needs even spatial dims, got {h}x{w}")
    if a.ndim != 2 or a.shape[0] != h * w:
        raise ShapeError(f"grid_pool2: tensor shape {a.shape} does not cover an {h}x{w} grid")
    d = a.shape[1]
    out_data = a.data.reshape(h // 2, 2, w // 2, 2, d).mean(axis=(1, 3)).reshape((h // 2) * (w // 2), d)

    def grad_fn(g):
        gg = g.reshape(h // 2, 1, w // 2, 1, d) / 4.0
        _accum(a, np.broadcast_to(gg, (h // 2, 2, w // 2, 2, d)).reshape(h * w, d))

    return _from_op(out_data, (a,), grad_fn)


def grid_position(row_table: Tensor, col_table: Tensor) -> Tensor:
    """Outer-sum position map: out[i*w + j] = row_table[i] + col_table[j]."""
    if row_table.shape[-1] != col_table.shape[-1]:
        raise ShapeError(
            f"grid_position: feature dims differ ({row_table.shape} vs {col_table.shape})"
        )
    h, d = row_table.shape
    w = col_table.shape[0]
    out_data = (row_table.data[:, None, :] + col_table.data[None, :, :]).reshape(h * w, d)

    def grad_fn(g):
        gg = g.reshape(h, w, d)
        if row_table.requires_grad:
            _accum(row_table, gg.sum(axis=1))
        if col_table.requires_grad:
            _accum(col_table, gg.sum(axis=0))

    return _from_op(out_data, (row_table, col_table), grad_fn)


def embedding(table: Tensor, idx) -> Tensor:
    """Gather rows of a 2-d tensor; duplicate indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got shape {table.shape}")
    out_data = table.data[idx]

    def grad_fn(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        _accum(table, buf)

    return _from_op(out_data, (table,), grad_fn)


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    per_input: list[float]
    max_rel_err: float
    passed: bool
    eps: float
    tol: float

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"grad-check {status}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e})"


def grad_check(
    f,
    inputs: list[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``f(*inputs)`` against central differences.

    The relative error per coordinate is |a - n| / max(|a|, |n|, 1), so tiny
    gradients are judged on absolute error and large ones on relative error.
    ``max_coords`` caps the number of coordinates probed per input (sampled
    with ``rng``); by default every coordinate is checked.
    """
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("grad_check inputs must have requires_grad=True")
        if not np.all(np.isfinite(t.data)):
            raise EvaluationError("grad_check inputs must be finite")

    out = f(*inputs)
    if out.data.size != 1:
        raise ArityError(f"grad_check target must be scalar, got shape {out.data.shape}")
    if not np.isfinite(out.data).all():
        raise EvaluationError("function value is not finite")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    if max_coords is not None and rng is None:
        rng = np.random.default_rng(0)

    per_input = []
    for t, a_grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if max_coords is not None and n_coords > max_coords:
            coords = np.sort(rng.choice(n_coords, size=max_coords, replace=False))
        else:
            coords = np.arange(n_coords)
        worst = 0.0
        a_flat = a_grad.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = f(*inputs).item()
            flat[c] = orig - eps
            lo = f(*inputs).item()
            flat[c] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise EvaluationError("function value is not finite during perturbation")
            numeric = (hi - lo) / (2.0 * eps)
            a = a_flat[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            if rel > worst:
                worst = rel
        per_input.append(float(worst))

    max_rel = max(per_input) if per_input else 0.0
    return GradCheckReport(
        per_input=per_input, max_rel_err=max_rel, passed=bool(max_rel <= tol), eps=eps, tol=tol
    )
