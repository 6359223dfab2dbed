"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive records its inputs and a backward closure on the output
tensor. ``Tensor.backward`` walks the recorded graph in reverse
topological order (the tape) and accumulates ``.grad`` on every tensor
that requires it. Operations whose inputs need no gradient produce plain
constant tensors and record nothing.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_FILL = -1e9
"""Sentinel written into absent topic rows and masked scores."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class EmptyTopicSetError(ValueError):
    """Raised when a masked softmax receives no unmasked entry."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """An immutable float64 array that may take part in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self, grad=None) -> None:
        """Propagate gradients from this tensor to every leaf on its tape."""
        if not self.requires_grad:
            return
        seed = np.ones_like(self.data) if grad is None else _as_array(grad)
        nodes = tape(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def tape(output: Tensor) -> list[Tensor]:
    """Return the tensors reachable from ``output`` in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


def _record(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
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


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return _record(np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v * v * v)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _record(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def take(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing with scatter-add backward."""
    out = x.data[index]
    basic = isinstance(index, (int, slice)) or (
        isinstance(index, tuple) and all(isinstance(i, (int, slice)) for i in index)
    )

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(np.array(out, dtype=np.float64), (x,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"token id out of range [0, {table.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _record(out, (table,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, parts, backward)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _record(out, parts, backward)


def pad_time(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    out = np.pad(x.data, widths)
    length = x.shape[-1]
    return _record(out, (x,), lambda g: (g[..., left : left + length],))


def scatter_rows(rows: Tensor, index: Sequence[int], n_rows: int, fill: float) -> Tensor:
    """Place ``rows`` at ``index`` inside an (n_rows, d) matrix filled with ``fill``."""
    index = np.asarray(index, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[0] != index.size:
        raise ShapeError(f"scatter_rows got {rows.shape} rows for {index.size} indices")
    out = np.full((n_rows, rows.shape[1]), fill, dtype=np.float64)
    out[index] = rows.data
    return _record(out, (rows,), lambda g: (g[index],))


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.asarray(out, dtype=np.float64), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` where ``weight`` has shape (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear input width {x.shape[-1]} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[1])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _record(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1) -> Tensor:
    """Valid 1-D convolution.

    ``x`` has shape (channels_in, time), ``weight`` (channels_out,
    channels_in, kernel). Output has shape (channels_out, frames).
    """
    c_in, length = x.shape
    c_out, w_in, kernel = weight.shape
    if w_in != c_in:
        raise ShapeError(f"conv1d expects {w_in} input channels, got {c_in}")
    if length < kernel:
        raise ShapeError(f"input of length {length} is shorter than kernel {kernel}")
    frames = (length - kernel) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, kernel, axis=1)[:, ::stride]
    # windows: (c_in, frames, kernel)
    cols = windows.transpose(1, 0, 2).reshape(frames, c_in * kernel)
    w2 = weight.data.reshape(c_out, c_in * kernel)
    out = w2 @ cols.T
    if bias is not None:
        out = out + bias.data[:, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = None
        if weight.requires_grad:
            gw = (g @ cols).reshape(weight.shape)
        if x.requires_grad:
            gcols = (g.T @ w2).reshape(frames, c_in, kernel)
            gx = np.zeros_like(x.data)
            span = stride * (frames - 1) + 1
            for k in range(kernel):
                gx[:, k : k + span : stride] += gcols[:, :, k].T
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=1)

    return _record(out, parents, backward)


# ---------------------------------------------------------------------------
# normalisation and probabilities


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match width {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (
                gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, (x, gain, bias), backward)


def softmax(x: Tensor, axis: int = -1, additive_mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax; ``additive_mask`` is added before exponentiation."""
    z = x.data - x.data.max(axis=axis, keepdims=True) if additive_mask is None else x.data + additive_mask
    if additive_mask is not None:
        z -= z.max(axis=axis, keepdims=True)
    out = np.exp(z, out=z)
    out /= out.sum(axis=axis, keepdims=True)

    def backward(g):
        gx = g - (g * out).sum(axis=axis, keepdims=True)
        gx *= out
        return (gx,)

    return _record(out, (x,), backward)


def masked_softmax(x: Tensor, mask) -> Tensor:
    """Softmax over a score vector with absent entries forced to zero weight.

    Masked entries are overwritten with ``MASK_FILL`` before
    exponentiation, so ``exp`` underflows to exactly zero for them. The
    normaliser is a correctly rounded sum, which makes the result
    independent of entry order.
    """
    x = _wrap(x)
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 1 or mask.shape != x.shape:
        raise ShapeError(f"masked_softmax needs matching vectors, got {x.shape} and {mask.shape}")
    if not mask.any():
        raise EmptyTopicSetError("empty topic set: every entry is masked")
    z = np.where(mask, x.data, MASK_FILL)
    z = z - z[mask].max()
    e = np.exp(z)
    total = math.fsum(e.tolist())
    out = e / total

    def backward(g):
        return (out * (g - float(np.dot(g, out))),)

    return _record(out, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _record(out, (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate zero."""
    if not train or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return mul(x, Tensor(scale))


def fsum_rows(weights: Tensor, rows: Tensor) -> Tensor:
    """``sum_i weights[i] * rows[i]`` with correctly rounded summation.

    The forward value does not depend on row order, which keeps topic
    aggregation exactly permutation invariant.
    """
    if weights.ndim != 1 or rows.ndim != 2 or weights.shape[0] != rows.shape[0]:
        raise ShapeError(f"fsum_rows needs (n,) and (n, d), got {weights.shape} and {rows.shape}")
    products = weights.data[:, None] * rows.data
    out = np.array([math.fsum(col) for col in products.T.tolist()], dtype=np.float64)

    def backward(g):
        gw = rows.data @ g if weights.requires_grad else None
        gr = np.outer(weights.data, g) if rows.requires_grad else None
        return gw, gr

    return _record(out, (weights, rows), backward)


def rowdot(rows: Tensor, vector: Tensor) -> Tensor:
    """Per-row inner product ``rows @ vector`` evaluated row by row.

    Each row is reduced independently, so the score of a row never depends
    on its position in the matrix.
    """
    if rows.ndim != 2 or vector.shape != (rows.shape[1],):
        raise ShapeError(f"rowdot needs (n, d) and (d,), got {rows.shape} and {vector.shape}")
    out = np.array([math.fsum(r) for r in (rows.data * vector.data).tolist()], dtype=np.float64)

    def backward(g):
        gr = np.outer(g, vector.data) if rows.requires_grad else None
        gv = rows.data.T @ g if vector.requires_grad else None
        return gr, gv

    return _record(out, (rows, vector), backward)


def straight_through_threshold(x: Tensor, alpha: float) -> Tensor:
    """Zero every entry below ``alpha``; retained entries pass unchanged.

    Backward is the identity on retained entries and zero on suppressed
    ones.
    """
    keep = x.data >= alpha
    out = np.where(keep, x.data, 0.0)
    return _record(out, (x,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-likelihood of ``label`` under softmax(logits)."""
    if label not in (0, 1) and not 0 <= label < logits.shape[-1]:
        raise ValueError(f"invalid label {label}")
    z = logits.data - logits.data.max()
    lse = math.log(np.exp(z).sum())
    probs = np.exp(z - lse)
    loss = lse - z[label]
    onehot = np.zeros_like(probs)
    onehot[label] = 1.0

    def backward(g):
        return (g * (probs - onehot),)

    return _record(np.asarray(loss, dtype=np.float64), (logits,), backward)


# ---------------------------------------------------------------------------
# verification


class GradCheckReport:
    """Outcome of comparing tape gradients with central differences."""

    def __init__(self, max_rel_error: float, tol: float, worst: str | None, failures: list[str]):
        self.max_rel_error = max_rel_error
        self.tol = tol
        self.worst = worst
        self.failures = failures

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error <= self.tol

    def __repr__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, worst={self.worst})"


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor] | dict[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` is re-evaluated after perturbing each checked entry in place, so
    it must read the current parameter values on every call. With
    ``max_entries`` set, that many entries per tensor are sampled.
    Relative error uses ``max(|a|, |n|, floor)`` as denominator.
    """
    named = params.items() if isinstance(params, dict) else ((p.name or f"param{i}", p) for i, p in enumerate(params))
    named = list(named)
    for _, p in named:
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {loss.shape}")
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for name, p in named}

    rng = rng or np.random.default_rng(0)
    worst_err, worst_at, failures = 0.0, None, []
    for name, p in named:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().data)
            flat[i] = orig - step
            down = float(f().data)
            flat[i] = orig
            where = f"{name}[{np.unravel_index(i, p.shape)}]"
            if not (math.isfinite(up) and math.isfinite(down)):
                failures.append(f"non-finite loss at {where}")
                continue
            numeric = (up - down) / (2 * step)
            err = relative_error(float(analytic[name].reshape(-1)[i]), numeric, floor)
            if err > worst_err:
                worst_err, worst_at = err, where
    return GradCheckReport(worst_err, tol, worst_at, failures)
