"""Dense float64 tensors with reverse-mode differentiation and Adam.

Just enough array math to train the desk-scale models in this package:
tensors wrap numpy arrays, every op records a backward closure, and
`backward` walks the graph in reverse topological order. Gradients are
verified against central finite differences (`finite_difference_check`),
which is the independent oracle for everything built on top.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import NotFiniteError, ShapeError

_FLOAT = np.float64

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / numeric probes)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Immutable-once-created dense array plus autograd bookkeeping.

    `data` is always a C-contiguous float64 ndarray. Ops never mutate an
    existing tensor; only optimizer updates touch leaf buffers in place.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf", name=None):
        arr = np.ascontiguousarray(data, dtype=_FLOAT)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled()
        self._parents = tuple(parents) if self.requires_grad or parents else ()
        self._backward = backward
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar; the real work happens in the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_FLOAT))


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad=False, name=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_FLOAT), requires_grad=requires_grad, name=name)


def _make(data, parents, backward, op) -> Tensor:
    if _grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            grads.accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            grads.accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            grads.accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, g * s)

    return _make(out, (a,), bwd, "scale")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, g * (a.data > 0.0))

    return _make(out, (a,), bwd, "relu")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, g.reshape(a.data.shape))

    return _make(out, (a,), bwd, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, np.transpose(g, inverse))

    return _make(out, (a,), bwd, "transpose")


def concat(parts, axis=0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, grads):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.accumulate(p, g[tuple(idx)])

    return _make(out, tuple(parts), bwd, "concat")


def take_rows(bank: Tensor, ids) -> Tensor:
    """Index axis 0 of `bank` with an integer array; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    if bank.data.ndim < 1:
        raise ShapeError("take_rows needs a bank with at least one axis")
    if ids.size and (ids.min() < 0 or ids.max() >= bank.data.shape[0]):
        raise ShapeError(
            f"row index out of range: valid [0, {bank.data.shape[0]}), got "
            f"[{ids.min()}, {ids.max()}]"
        )
    out = bank.data[ids]

    def bwd(g, grads):
        if bank.requires_grad:
            gb = np.zeros_like(bank.data)
            np.add.at(gb, ids.reshape(-1), g.reshape((-1,) + bank.data.shape[1:]))
            grads.accumulate(bank, gb)

    return _make(out, (bank,), bwd, "take_rows")


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum()

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(out, (a,), bwd, "sum_all")


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; a no-op when p == 0."""
    if p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = a.data * keep

    def bwd(g, grads):
        if a.requires_grad:
            grads.accumulate(a, g * keep)

    return _make(out, (a,), bwd, "dropout")


# ---------------------------------------------------------------------------
# linear algebra and normalization


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics on leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def bwd(g, grads):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            grads.accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            grads.accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), bwd, "matmul")


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where `mask` is True.

    Masked positions come out exactly 0. A row with no valid position yields
    all-exact-zeros; that degenerate contract is never hit in normal flow
    (empty knowledge is a one-slot zero bundle, not an all-masked row).
    """
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    try:
        if np.broadcast_shapes(logits.data.shape, mask.shape) != logits.data.shape:
            raise ShapeError(f"mask shape {mask.shape} does not broadcast to logits {logits.data.shape}")
    except ValueError:
        raise ShapeError(f"mask shape {mask.shape} does not broadcast to logits {logits.data.shape}") from None
    if logits.data.shape[-1] == 0:
        out = np.zeros_like(logits.data)
    elif mask.all():
        shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.broadcast_to(mask, logits.data.shape)
        neg_inf = np.where(mask, logits.data, -np.inf)
        row_max = neg_inf.max(axis=-1, keepdims=True)
        row_max = np.where(np.isfinite(row_max), row_max, 0.0)
        e = np.exp(np.where(mask, logits.data - row_max, -np.inf))
        denom = e.sum(axis=-1, keepdims=True)
        out = e / np.where(denom == 0.0, 1.0, denom)

    def bwd(g, grads):
        if logits.requires_grad:
            inner = (g * out).sum(axis=-1, keepdims=True)
            grads.accumulate(logits, out * (g - inner))

    return _make(out, (logits,), bwd, "masked_softmax")


def softmax(logits: Tensor) -> Tensor:
    return masked_softmax(logits, np.ones(logits.data.shape, dtype=bool))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then scale and shift."""
    d = x.data.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs a last axis of size >= 2, got {d}")
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(f"gamma/beta must have shape ({d},), got {gamma.data.shape} and {beta.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g, grads):
        if gamma.requires_grad:
            grads.accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            grads.accumulate(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx_hat = g * gamma.data
            mean_g = gx_hat.mean(axis=-1, keepdims=True)
            mean_gx = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            grads.accumulate(x, inv * (gx_hat - mean_g - xhat * mean_gx))

    return _make(out, (x, gamma, beta), bwd, "layer_norm")


def cross_entropy(logits: Tensor, targets, ignore_id: int | None = None) -> Tensor:
    """Mean negative log-likelihood of `targets` under row-wise softmax.

    `logits` is [..., V]; `targets` holds integer class ids of the matching
    leading shape. Rows whose target equals `ignore_id` are dropped from the
    mean (used for padding).
    """
    ids = np.asarray(targets, dtype=np.int64)
    V = logits.data.shape[-1]
    flat = logits.data.reshape(-1, V)
    ids_flat = ids.reshape(-1)
    if ids_flat.shape[0] != flat.shape[0]:
        raise ShapeError(f"targets shape {ids.shape} does not match logits {logits.data.shape}")
    keep = np.ones(ids_flat.shape[0], dtype=bool) if ignore_id is None else ids_flat != ignore_id
    checked = ids_flat[keep]
    if checked.size == 0:
        raise ShapeError("cross_entropy got no non-ignored targets")
    if checked.min() < 0 or checked.max() >= V:
        raise ShapeError(f"target id out of range: vocabulary size {V}, got id {int(checked[np.argmax((checked < 0) | (checked >= V))])}")
    n = int(keep.sum())

    row_max = flat.max(axis=-1, keepdims=True)
    shifted = flat - row_max
    lse = np.log(np.exp(shifted).sum(axis=-1)) + row_max[:, 0]
    picked = flat[np.arange(flat.shape[0]), np.where(keep, ids_flat, 0)]
    losses = (lse - picked) * keep
    out = losses.sum() / n

    def bwd(g, grads):
        if logits.requires_grad:
            p = np.exp(shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True)))
            p[np.arange(flat.shape[0]), np.where(keep, ids_flat, 0)] -= 1.0
            p *= (keep / n)[:, None]
            grads.accumulate(logits, (g * p).reshape(logits.data.shape))

    return _make(np.asarray(out), (logits,), bwd, "cross_entropy")


# ---------------------------------------------------------------------------
# parameters, backward, optimizer, gradient oracle


class ParameterSet:
    """Named trainable tensors with deterministic (sorted) iteration order."""

    def __init__(self, params: dict | None = None):
        self._params: dict[str, Tensor] = {}
        if params:
            for name, t in params.items():
                self.add(name, t)

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t.name = name
        self._params[name] = t
        return t

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def subset(self, names) -> "ParameterSet":
        return ParameterSet({n: self._params[n] for n in names})

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for n, t in self.items():
            out.add(n, Tensor(t.data.copy(), requires_grad=t.requires_grad))
        return out

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self.names())


class _GradStore:
    """Accumulated gradients keyed by tensor identity.

    Stored arrays are never mutated in place (first write aliases the
    incoming array, later writes allocate the sum), so backward closures may
    safely hand over views.
    """

    def __init__(self):
        self._by_id: dict[int, np.ndarray] = {}

    def accumulate(self, t: Tensor, g: np.ndarray):
        key = id(t)
        cur = self._by_id.get(key)
        self._by_id[key] = g if cur is None else cur + g

    def get(self, t: Tensor):
        return self._by_id.get(id(t))


def _toposort(root: Tensor) -> list[Tensor]:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def first_nonfinite(root: Tensor) -> Tensor | None:
    """Earliest tensor (forward order) under `root` holding a NaN/Inf, if any."""
    for node in _toposort(root):
        if not np.all(np.isfinite(node.data)):
            return node
    return None


def backward(loss: Tensor, params: ParameterSet) -> dict[str, Tensor]:
    """Gradient of a scalar `loss` w.r.t. every parameter.

    Parameters not reachable from the loss get zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        bad = first_nonfinite(loss)
        raise NotFiniteError(f"loss is not finite; first bad tensor: op={bad.op!r} name={bad.name!r}")

    grads = _GradStore()
    grads.accumulate(loss, np.ones((), dtype=_FLOAT).reshape(loss.data.shape))
    for node in reversed(_toposort(loss)):
        if node._backward is None or not node.requires_grad:
            continue
        g = grads.get(node)
        if g is None:
            continue
        node._backward(g, grads)

    out: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise NotFiniteError(f"gradient for {name!r} is not finite")
        out[name] = Tensor(g, op="grad", name=name)
    return out


@dataclass
class OptimizerState:
    """Adam moments plus hyperparameters; `warmup_steps > 0` scales lr linearly."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParameterSet, grads: dict, state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place on the parameter buffers."""
    for name in params.names():
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    lr = state.lr
    if state.warmup_steps > 0:
        lr = lr * min(1.0, t / state.warmup_steps)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=_FLOAT)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_difference_check(forward, params: ParameterSet, eps: float = 1e-5,
                            samples: int = 2, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes `samples` coordinates per parameter (all, for tiny tensors). The
    relative error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")

    loss = forward(params)
    if not np.isfinite(loss.data):
        raise NotFiniteError("forward value is not finite")
    grads = backward(loss, params)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        coords = np.arange(n) if n <= samples else rng.choice(n, size=samples, replace=False)
        for c in np.sort(coords):
            orig = flat[c]
            flat[c] = orig + eps
            with no_grad():
                f_plus = forward(params).item()
            flat[c] = orig - eps
            with no_grad():
                f_minus = forward(params).item()
            flat[c] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NotFiniteError(f"forward value is not finite while probing {name!r}")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = grads[name].data.reshape(-1)[c]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
