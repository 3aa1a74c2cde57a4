"""Small reverse-mode differentiation engine over numpy arrays, plus Adam.

Only the primitives the graph autoencoder needs are provided. Values are
kept in float64 whatever the dtype of the arrays handed in.

    tape = Tape()
    x = tape.var(np.array([1.0, 2.0]))
    loss = sum_reduce(hadamard(x, x))
    tape.backward(loss)
    x.grad  # -> [2., 4.]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class Var:
    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, value, tape: "Tape", requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.name or '?'}, shape={self.value.shape})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


class Tape:
    """Records primitive applications; :meth:`backward` replays them in reverse."""

    def __init__(self, check_finite: bool = False):
        self.records: list[tuple[str, Callable[[], None]]] = []
        self.check_finite = check_finite

    def var(self, value, requires_grad: bool = True, name: str = "") -> Var:
        return Var(value, self, requires_grad, name)

    def const(self, value, name: str = "") -> Var:
        return Var(value, self, False, name)

    def _emit(self, op: str, value, inputs: Sequence[Var], backward) -> Var:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"{op} produced non-finite values")
        out = Var(value, self, any(v.requires_grad for v in inputs), op)
        if out.requires_grad:
            self.records.append((op, lambda: backward(out)))
        return out

    def backward(self, out: Var, seed=None) -> None:
        if seed is None:
            if out.value.size != 1:
                raise ValueError("backward from a non-scalar needs an explicit seed")
            seed = np.ones_like(out.value)
        out.grad = np.array(seed, dtype=np.float64)
        for _, fn in reversed(self.records):
            fn()
        self.records.clear()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Var, b: Var):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a: Var, b: Var) -> Var:
    _check_broadcast("add", a, b)

    def back(out):
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(out.grad, b.shape))

    return a.tape._emit("add", a.value + b.value, (a, b), back)


def sub(a: Var, b: Var) -> Var:
    _check_broadcast("sub", a, b)

    def back(out):
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(-_unbroadcast(out.grad, b.shape))

    return a.tape._emit("sub", a.value - b.value, (a, b), back)


def hadamard(a: Var, b: Var) -> Var:
    """Elementwise product; a trailing size-1 axis broadcasts (score x latent)."""
    _check_broadcast("hadamard", a, b)

    def back(out):
        a._accumulate(_unbroadcast(out.grad * b.value, a.shape))
        b._accumulate(_unbroadcast(out.grad * a.value, b.shape))

    return a.tape._emit("hadamard", a.value * b.value, (a, b), back)


def scale(a: Var, c: float) -> Var:
    def back(out):
        a._accumulate(out.grad * c)

    return a.tape._emit("scale", a.value * c, (a,), back)


def matmul(x: Var, w: Var) -> Var:
    """Channel transform: ``x[..., C_in] @ w[C_in, C_out]``."""
    if w.value.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {x.shape} and {w.shape}")

    def back(out):
        if x.requires_grad:
            x._accumulate(out.grad @ w.value.T)
        if w.requires_grad:
            xs = x.value.reshape(-1, x.shape[-1])
            w._accumulate(xs.T @ out.grad.reshape(-1, w.shape[1]))

    return x.tape._emit("matmul", x.value @ w.value, (x, w), back)


def mix(x: Var, op: np.ndarray, axes: Sequence[int]) -> Var:
    """Left-multiply by a fixed square operator along the flattened ``axes``.

    ``axes`` are flattened in the given order (first is slowest), so
    ``axes=(2, 0)`` on an ``N x T x P x C`` tensor indexes rows as ``p*N + n``.
    """
    axes = tuple(axes)
    k = int(np.prod([x.shape[i] for i in axes]))
    if op.shape != (k, k):
        raise ValueError(f"mix: operator {op.shape} does not match axes {axes} of {x.shape}")
    if len(axes) == 1:
        # contiguous (pre, k, post) view; batched matmul needs no transpose
        a = axes[0]
        pre = int(np.prod(x.shape[:a]))
        post = int(np.prod(x.shape[a + 1:]))

        def apply(m, v):
            return np.matmul(m, v.reshape(pre, k, post)).reshape(v.shape)
    else:
        rest = tuple(i for i in range(x.value.ndim) if i not in axes)
        perm = axes + rest
        inv = np.argsort(perm)
        moved_shape = tuple(x.shape[i] for i in perm)

        def apply(m, v):
            flat = v.transpose(perm).reshape(k, -1)
            return (m @ flat).reshape(moved_shape).transpose(inv)

    def back(out):
        if x.requires_grad:
            x._accumulate(apply(op.T, out.grad))

    return x.tape._emit("mix", apply(op, x.value), (x,), back)


def sigmoid(x: Var) -> Var:
    v = x.value
    # split by sign to stay finite for large |v|
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def back(out):
        x._accumulate(out.grad * s * (1.0 - s))

    return x.tape._emit("sigmoid", s, (x,), back)


def relu(x: Var) -> Var:
    mask = x.value > 0

    def back(out):
        x._accumulate(out.grad * mask)

    return x.tape._emit("relu", x.value * mask, (x,), back)


def max_reduce(x: Var, axes: Sequence[int]) -> Var:
    """Max over ``axes`` (kept as size-1 dims). Gradient goes to the first argmax."""
    axes = tuple(a % x.value.ndim for a in axes)
    keep = tuple(i for i in range(x.value.ndim) if i not in axes)
    perm = keep + axes
    moved = x.value.transpose(perm)
    kshape = moved.shape[: len(keep)]
    flat = moved.reshape(kshape + (-1,))
    arg = flat.argmax(axis=-1)
    val = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def back(out):
        g = np.zeros_like(flat)
        np.put_along_axis(g, arg[..., None], out.grad.reshape(kshape)[..., None], axis=-1)
        x._accumulate(g.reshape(moved.shape).transpose(np.argsort(perm)))

    return x.tape._emit("max_reduce", val.reshape(out_shape), (x,), back)


def reshape(x: Var, shape: Sequence[int]) -> Var:
    def back(out):
        x._accumulate(out.grad.reshape(x.shape))

    return x.tape._emit("reshape", x.value.reshape(shape), (x,), back)


def sum_reduce(x: Var) -> Var:
    def back(out):
        x._accumulate(np.broadcast_to(out.grad, x.shape))

    return x.tape._emit("sum_reduce", np.array(x.value.sum()), (x,), back)


def smooth_l1_values(y: np.ndarray, beta: float = 1.0) -> np.ndarray:
    a = np.abs(y)
    return np.where(a < beta, 0.5 * y * y / beta, a - 0.5 * beta)


def smooth_l1(y: Var, beta: float = 1.0) -> Var:
    """Elementwise Huber-style penalty: ``0.5 y^2 / beta`` below beta, ``|y| - beta/2`` above."""

    def back(out):
        d = np.where(np.abs(y.value) < beta, y.value / beta, np.sign(y.value))
        y._accumulate(out.grad * d)

    return y.tape._emit("smooth_l1", smooth_l1_values(y.value, beta), (y,), back)


def smooth_l1_norm(y: Var, beta: float = 1.0) -> Var:
    return sum_reduce(smooth_l1(y, beta))


# ---------------------------------------------------------------- grad check


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    failing: list[tuple[int, ...]]
    tie_sensitive: list[tuple[int, ...]]
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return not self.failing


def grad_check(
    fn: Callable[[Tape, Var], Var],
    point: np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-4,
    abs_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``fn(tape, x)`` with central differences.

    Relative error is ``|a - n| / max(|a|, |n|, abs_floor)``. Coordinates where
    the one-sided differences disagree (a kink such as a max tie or relu at 0)
    are reported as tie-sensitive instead of failing.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=np.float64)

    def evaluate(values):
        tape = Tape()
        out = fn(tape, tape.const(values))
        v = float(out.value)
        if not np.isfinite(v):
            raise GradCheckError("non-finite evaluation")
        return v

    tape = Tape()
    x = tape.var(point.copy())
    out = fn(tape, x)
    if not np.isfinite(out.value).all():
        raise GradCheckError("non-finite evaluation at the base point")
    f0 = float(out.value)
    tape.backward(out)
    analytic = np.zeros_like(point) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(point)
    failing, ties = [], []
    worst = 0.0
    for idx in np.ndindex(point.shape):
        plus, minus = point.copy(), point.copy()
        plus[idx] += h
        minus[idx] -= h
        try:
            fp, fm = evaluate(plus), evaluate(minus)
        except GradCheckError:
            raise GradCheckError(f"non-finite evaluation at index {idx}") from None
        numeric[idx] = (fp - fm) / (2 * h)
        denom = max(abs(analytic[idx]), abs(numeric[idx]), abs_floor)
        err = abs(analytic[idx] - numeric[idx]) / denom
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        kink = abs(fwd - bwd) / max(abs(fwd), abs(bwd), abs_floor) > max(tol, 1e3 * h)
        if err > tol:
            (ties if kink else failing).append(idx)
        elif kink:
            ties.append(idx)
        if not kink:
            worst = max(worst, err)
    return GradCheckReport(worst, failing, ties, analytic, numeric)


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> dict[str, np.ndarray]:
    """One Adam update with decoupled weight decay.

    Each parameter is first shrunk by ``1 - lr * weight_decay``, then moved by
    the bias-corrected moment ratio. Moments live in float64; the returned
    arrays keep each parameter's dtype. ``state`` is updated in place.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}; step rejected")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])} for {name}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new = {}
    for name, p in params.items():
        p64 = np.asarray(p, dtype=np.float64)
        g = grads.get(name)
        if g is None:
            new[name] = p
            continue
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p64)
            v = np.zeros_like(p64)
        p64 = p64 * (1.0 - state.lr * state.weight_decay)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        p64 = p64 - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        state.m[name], state.v[name] = m, v
        new[name] = p64.astype(np.asarray(p).dtype)
    return new
