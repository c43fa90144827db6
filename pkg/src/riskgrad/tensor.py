"""Dense reverse-mode autodiff over numpy arrays.

Ops are recorded on an explicit :class:`Tape` while one is active (``with tape:``).
Every recorded op stores its inputs, its output and a vector-Jacobian product;
:func:`backward` replays the records once, in reverse order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_TAPES: list["Tape"] = []


class Tensor:
    """An n-d float64 array that may take part in differentiation."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return mul(self, 1.0 / _as_array(other)) if not isinstance(other, Tensor) else div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t: Tensor) -> float:
    raise ContractError(f"item() on non-scalar tensor of shape {t.shape}")


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered op records plus the registry of parameters to differentiate."""

    records: list[Record] = field(default_factory=list)
    params: list[Tensor] = field(default_factory=list)

    def watch(self, *params: Tensor) -> "Tape":
        for p in params:
            p.requires_grad = True
            if not any(p is q for q in self.params):
                self.params.append(p)
        return self

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(out_data)
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1].records.append(Record(out, inputs, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(tape: Tape, loss: Tensor) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` for every parameter registered on ``tape``.

    Parameters the loss does not depend on receive an exact zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return [grads.get(id(p), np.zeros_like(p.data)) for p in tape.params]


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad / bd,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    pick_a = ad <= bd
    return _record(
        np.where(pick_a, ad, bd),
        (a, b),
        lambda g: (_unbroadcast(np.where(pick_a, g, 0.0), ad.shape), _unbroadcast(np.where(pick_a, 0.0, g), bd.shape)),
    )


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _record(np.clip(ad, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


ACTIVATIONS = ("tanh", "elu", "relu", "identity")


def activation(x, kind: str) -> Tensor:
    """Apply ``kind`` elementwise. Supported: tanh, elu, relu, identity."""
    x = as_tensor(x)
    xd = x.data
    if kind == "identity":
        return _record(xd.copy(), (x,), lambda g: (g,))
    if kind == "tanh":
        out = np.tanh(xd)
        return _record(out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "elu":
        # exp(min(x, 0)) is both the derivative and, minus one, the negative branch
        slope = np.minimum(xd, 0.0)
        np.exp(slope, out=slope)
        out = np.maximum(xd, 0.0)
        out += slope
        out -= 1.0
        return _record(out, (x,), lambda g: (g * slope,))
    if kind == "relu":
        return _record(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),))
    raise ContractError(f"unsupported activation {kind!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------- reductions / shape


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = math.prod(a.shape[ax] for ax in axes)
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record(np.expand_dims(a.data, axis), (a,), lambda g: (g.reshape(old),))


def take_along_last(a, index: np.ndarray) -> Tensor:
    """``a[..., index]`` picking one entry of the last axis per leading position."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)[..., None]
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.put_along_axis(out, idx, g[..., None], axis=-1)
        return (out,)

    return _record(np.take_along_axis(a.data, idx, axis=-1)[..., 0], (a,), vjp)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)
    return _record(out, (a,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``b`` two-dimensional; ``a`` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return (g @ bd.T, gb)

    return _record(ad @ bd, (a, b), vjp)


def affine_forward(x, w, b) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (..., k), ``w`` (k, m), ``b`` (m,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    xd, wd = x.data, w.data

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g @ wd.T, xd.reshape(-1, xd.shape[-1]).T @ g2, g2.sum(axis=0))

    return _record(xd @ wd + b.data, (x, w, b), vjp)


# ---------------------------------------------------------------- finite differences


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    passed: bool
    per_param: list[float]


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central finite differences.

    ``f`` must rebuild the loss from the current contents of ``params``; the
    parameter arrays are perturbed in place and restored afterwards. Relative
    error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    tape = Tape().watch(*params)
    with tape:
        loss = f()
    analytic = backward(tape, loss)
    per_param, worst_abs = [], 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            err = abs(num - gflat[i])
            worst_abs = max(worst_abs, err)
            worst = max(worst, err / max(abs(num), abs(gflat[i]), floor))
        per_param.append(worst)
    max_rel = max(per_param, default=0.0)
    return GradCheckReport(max_rel, worst_abs, max_rel < tol, per_param)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass
class AdamReport:
    applied: bool
    reason: str = ""


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    state: AdamState | None = None,
) -> tuple[list[np.ndarray], AdamState, AdamReport]:
    """One bias-corrected Adam update. Returns new arrays; inputs are untouched.

    A non-finite gradient rejects the whole update and leaves params and
    state unchanged.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
    if state is None:
        state = AdamState.zeros_like(params)
    if not all(np.all(np.isfinite(g)) for g in grads):
        return [p.copy() for p in params], state, AdamReport(False, "non-finite gradient")
    t = state.t + 1
    m = [beta1 * mi + (1.0 - beta1) * g for mi, g in zip(state.m, grads)]
    v = [beta2 * vi + (1.0 - beta2) * g * g for vi, g in zip(state.v, grads)]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t), AdamReport(True)


class Adam:
    """Stateful wrapper around :func:`adam_step` that updates tensors in place."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self, grads: Sequence[np.ndarray]) -> AdamReport:
        new, self.state, report = adam_step(
            [p.data for p in self.params], grads, self.lr, self.beta1, self.beta2, self.eps, self.state
        )
        if report.applied:
            for p, arr in zip(self.params, new):
                p.data = arr
        return report


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        return [g * scale for g in grads], total
    return list(grads), total


# ---------------------------------------------------------------- MLP


@dataclass
class Mlp:
    """Fully connected stack; ``activations[k]`` follows layer ``k``."""

    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]

    def __post_init__(self):
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[0] != self.weights[k - 1].shape[1]:
                raise ShapeError(
                    f"layer {k} input {self.weights[k].shape[0]} != layer {k - 1} output {self.weights[k - 1].shape[1]}"
                )

    @classmethod
    def init(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden: str = "elu",
        out: str = "identity",
        out_scale: float = 1.0,
    ) -> "Mlp":
        weights, biases, acts = [], [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            std = math.sqrt(2.0 / fan_in) * (out_scale if last else 1.0)
            weights.append(Tensor(rng.normal(0.0, std, size=(fan_in, fan_out))))
            biases.append(Tensor(np.zeros(fan_out)))
            acts.append(out if last else hidden)
        return cls(weights, biases, acts)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        if h.shape[-1] != self.sizes[0]:
            raise ShapeError(f"MLP expects input width {self.sizes[0]}, got shape {h.shape}")
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = activation(affine_forward(h, w, b), act)
        return h

    def describe(self) -> dict:
        return {"sizes": self.sizes, "activations": list(self.activations)}


def flatten(params: Sequence[Tensor]) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([p.data.reshape(-1) for p in params])


def unflatten_into(params: Sequence[Tensor], flat: np.ndarray) -> None:
    offset = 0
    for p in params:
        n = p.data.size
        if offset + n > flat.size:
            raise ShapeError(f"flat vector of length {flat.size} too short")
        p.data = flat[offset : offset + n].reshape(p.shape).copy()
        offset += n
    if offset != flat.size:
        raise ShapeError(f"flat vector has {flat.size - offset} trailing entries")
