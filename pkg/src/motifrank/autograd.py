"""Dense float64 tensors with an opt-in reverse-mode tape and the Adam optimizer.

Operations only record themselves while a :class:`Tape` is active::

    with Tape() as tape:
        loss = (x @ w).sigmoid().sum()
    tape.backward(loss)          # gradients land in every Parameter.grad

Outside a tape the same calls are plain numpy arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, TapeUsageError

_TAPES: list["Tape"] = []


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{op} produced non-finite values")


class Tensor:
    """Row-major float64 array, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    """Trainable tensor with a gradient slot of identical shape."""

    __slots__ = ("name", "grad")

    def __init__(self, data, name: str = "param"):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable operations executed while active."""

    def __init__(self):
        self.records: list[_Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def _record(self, rec: _Record) -> None:
        self.records.append(rec)
        self._outputs.add(id(rec.output))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into every reachable Parameter.grad."""
        if loss.data.size != 1:
            raise TapeUsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise TapeUsageError("loss was not produced under this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.shape)
                if isinstance(inp, Parameter):
                    inp.grad += gi
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _emit(op: str, value: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    _check_finite(value, op)
    tracked = bool(_TAPES) and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = tracked
    if tracked:
        _TAPES[-1]._record(_Record(op, inputs, out, bwd))
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    return _emit("mul", x * y, (a, b), lambda g: (g * y, g * x))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        q = x / y     # non-finite results are rejected by _emit
    return _emit("div", q, (a, b), lambda g: (g / y, -g * x / (y * y)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    # subgradient at exactly 0 is 0
    a = as_tensor(a)
    pos = a.data > 0
    return _emit("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return _emit("exp", e, (a,), lambda g: (g * e,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _emit("square", x * x, (a,), lambda g: (2.0 * g * x,))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return _emit("matmul", x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _emit("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return _emit("reshape", value, (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        value = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shape mismatch: {[t.shape for t in ts]}") from exc
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit("concat", value, ts, lambda g: tuple(np.split(g, cuts, axis=axis)))


def index(a, key) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def bwd(g):
        out = np.zeros(src)
        np.add.at(out, key, g)
        return (out,)

    return _emit("index", np.array(a.data[key], dtype=np.float64), (a,), bwd)


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _emit("sum", np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < max(a.ndim, 1):
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def masked_softmax(a, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to entries where ``mask`` is true.

    Masked-out entries are exactly 0; a slice with no unmasked entry is all 0.
    """
    a = as_tensor(a)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise DimensionError(f"mask shape {m.shape} != input shape {a.shape}")
    z = np.where(m, a.data, -np.inf)
    top = z.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(m, np.exp(np.where(m, a.data, 0.0) - top), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    y = e / np.where(total > 0, total, 1.0)
    return _emit("masked_softmax", y,
                 (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {p.name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------- gradient check

def grad_check(fn: Callable[..., Tensor], inputs: Sequence, eps: float = 1e-5,
               seed: int = 0, atol: float = 1e-9) -> float:
    """Largest relative disagreement between taped and central-difference gradients.

    ``fn`` maps Tensors to a Tensor; non-scalar outputs are reduced with a fixed
    random projection. Per entry the error is ``|a - n| / max(|a|, |n|, 1e-3 * s)``
    where ``s`` is the largest gradient magnitude of that input, so entries that
    are negligible relative to the rest are judged on an absolute scale. An input
    whose analytic and numeric gradients both stay within ``atol`` is taken as an
    identically zero gradient, where the difference quotient is pure roundoff.
    """
    arrays = [np.array(as_tensor(x).data, dtype=np.float64) for x in inputs]
    probe = None

    def scalar(out: Tensor) -> Tensor:
        nonlocal probe
        if out.data.size == 1:
            return out.sum()
        if probe is None:
            probe = np.random.default_rng(seed).standard_normal(out.shape)
        return (out * probe).sum()

    params = [Parameter(a.copy(), name=f"input{k}") for k, a in enumerate(arrays)]
    with Tape() as tape:
        out = scalar(fn(*params))
    if not out.requires_grad:
        return 0.0  # output does not depend on any input
    tape.backward(out)

    worst = 0.0
    for k, p in enumerate(params):
        numeric = np.zeros_like(arrays[k])
        for idx in np.ndindex(arrays[k].shape):
            vals = []
            for step in (eps, -eps):
                shifted = [a.copy() for a in arrays]
                shifted[k][idx] += step
                vals.append(scalar(fn(*[Tensor(s) for s in shifted])).item())
            numeric[idx] = (vals[0] - vals[1]) / (2.0 * eps)
        analytic = p.grad
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        if scale <= atol:
            continue
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3 * scale)
        worst = max(worst, float((np.abs(analytic - numeric) / denom).max()))
    return worst
