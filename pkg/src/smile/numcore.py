"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to :class:`Var` values.
:func:`gradient` walks the tape backwards from a scalar root and returns
gradients for the parameters registered on it.

Piecewise-linear primitives (``relu``, ``clip``, ``hinge``) also record the
sign pattern of their kink arguments so tests can detect when a finite
difference step would straddle a kink.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ContractError(RuntimeError):
    """A precondition of a tape operation was violated."""


def as_array(values, name: str = "array") -> np.ndarray:
    """Convert external data to a float64 array, rejecting NaN and Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class Var:
    __slots__ = ("value", "tape", "index", "name")

    def __init__(self, value: np.ndarray, tape: "Tape | None" = None,
                 index: int = -1, name: str | None = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self):
        return self.value.shape

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

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape})"


class Tape:
    """Ordered record of primitive operations.

    Each entry is ``(output, parents, vjp)`` where ``vjp(g)`` maps the output
    cotangent to one cotangent per parent (``None`` for constants).
    """

    def __init__(self):
        self.entries: list[tuple[Var, tuple, Callable]] = []
        self.params: dict[str, Var] = {}
        self.kinks: list[np.ndarray] = []

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        v = Var(np.array(value, dtype=np.float64), self, -1, name)
        self.params[name] = v
        return v

    def record(self, value: np.ndarray, parents: tuple, vjp: Callable) -> Var:
        out = Var(value, self, len(self.entries))
        self.entries.append((out, parents, vjp))
        return out

    def kink_signature(self) -> np.ndarray:
        if not self.kinks:
            return np.zeros(0, dtype=bool)
        return np.concatenate([k.ravel() for k in self.kinks])


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            return x.tape
    return None


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _emit(value, parents, vjp) -> Var:
    tape = _tape_of(*parents)
    if tape is None:
        return Var(value)
    return tape.record(value, parents, vjp)


def constant(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64))


# ---------------------------------------------------------------- primitives

def affine(W, b, x) -> Var:
    """``x @ W.T + b`` for a single vector ``x`` of shape (q,) or a batch (N, q)."""
    Wv, bv, xv = _val(W), _val(b), _val(x)
    if Wv.ndim != 2 or bv.shape != (Wv.shape[0],) or xv.shape[-1:] != (Wv.shape[1],):
        raise DimensionError(
            f"affine: W{Wv.shape}, b{bv.shape}, x{xv.shape} do not conform")
    out = xv @ Wv.T + bv

    def vjp(g):
        gx = g @ Wv
        if xv.ndim == 1:
            gW = np.outer(g, xv)
            gb = g
        else:
            gW = g.T @ xv
            gb = g.sum(axis=0)
        return gW, gb, gx

    return _emit(out, (W, b, x), vjp)


def relu(x) -> Var:
    xv = _val(x)
    active = xv > 0.0
    tape = _tape_of(x)
    if tape is not None:
        tape.kinks.append(active)
    return _emit(np.where(active, xv, 0.0), (x,), lambda g: (g * active,))


def hinge(x) -> Var:
    """``max(0, x)``; same primitive as relu, kept separate for readability of losses."""
    return relu(x)


def clip(z, lo, hi) -> Var:
    """Elementwise ``max(lo, min(hi, z))``.

    Gradient goes to ``z`` inside ``[lo, hi]``, to ``lo`` below it, to ``hi``
    above it, and entirely to ``lo`` when the bounds are flipped.
    """
    zv, lv, uv = np.broadcast_arrays(_val(z), _val(lo), _val(hi))
    flipped = lv > uv
    below = (zv < lv) | flipped
    above = (zv > uv) & ~flipped
    inside = ~(below | above)
    out = np.maximum(lv, np.minimum(uv, zv))
    tape = _tape_of(z, lo, hi)
    if tape is not None:
        tape.kinks.extend([flipped, zv < lv, zv > uv])
    zs, ls, us = _val(z).shape, _val(lo).shape, _val(hi).shape

    def vjp(g):
        return (_unbroadcast(g * inside, zs), _unbroadcast(g * below, ls),
                _unbroadcast(g * above, us))

    return _emit(out, (z, lo, hi), vjp)


def where(mask, a, b) -> Var:
    """Select ``a`` where ``mask`` is true and ``b`` elsewhere (mask is constant)."""
    m = np.asarray(mask, dtype=bool)
    av, bv = _val(a), _val(b)
    out = np.where(m, av, bv)
    sa, sb = av.shape, bv.shape
    return _emit(out, (a, b), lambda g: (_unbroadcast(g * m, sa),
                                         _unbroadcast(g * ~m, sb)))


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    sa, sb = av.shape, bv.shape
    return _emit(av + bv, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)
    sa, sb = av.shape, bv.shape
    return _emit(av - bv, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    sa, sb = av.shape, bv.shape
    return _emit(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def square(x) -> Var:
    xv = _val(x)
    return _emit(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def softplus(x) -> Var:
    xv = _val(x)
    out = np.logaddexp(0.0, xv)
    sig = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return _emit(out, (x,), lambda g: (g * sig,))


def total(x) -> Var:
    """Sum of all entries, as a 0-d value."""
    xv = _val(x)
    shape = xv.shape
    return _emit(np.asarray(xv.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x) -> Var:
    xv = _val(x)
    shape, size = xv.shape, max(xv.size, 1)
    return _emit(np.asarray(xv.mean()), (x,),
                 lambda g: (np.full(shape, float(g) / size),))


def sum_rows(x) -> Var:
    """Sum over the last axis."""
    xv = _val(x)
    shape = xv.shape
    return _emit(xv.sum(axis=-1), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, -1), shape).copy(),))


def dot(x, w) -> Var:
    """``x @ w`` for a vector or batch ``x`` and a weight vector ``w``."""
    xv, wv = _val(x), _val(w)
    if xv.shape[-1:] != wv.shape:
        raise DimensionError(f"dot: x{xv.shape} and w{wv.shape} do not conform")

    def vjp(g):
        if xv.ndim == 1:
            return g * wv, g * xv
        return np.outer(g, wv), g @ xv

    return _emit(xv @ wv, (x, w), vjp)


def maximum(a, b) -> Var:
    """Elementwise max; ties send the gradient to ``a``."""
    av, bv = np.broadcast_arrays(_val(a), _val(b))
    pick_a = av >= bv
    tape = _tape_of(a, b)
    if tape is not None:
        tape.kinks.append(pick_a)
    sa, sb = _val(a).shape, _val(b).shape
    return _emit(np.where(pick_a, av, bv), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, sa),
                            _unbroadcast(g * ~pick_a, sb)))


# ----------------------------------------------------------------- backward

def gradient(tape: Tape, root: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
    """Return d(root)/d(param) for every parameter registered on ``tape``.

    Parameters that do not influence ``root`` get exact zeros.
    """
    if root.value.size != 1:
        raise ContractError(f"gradient root must be scalar, got shape {root.value.shape}")
    grads: dict[int, np.ndarray] = {}
    pgrads = {name: np.zeros_like(v.value) for name, v in tape.params.items()}
    param_ids = {id(v): name for name, v in tape.params.items()}

    def push(var, g):
        if not isinstance(var, Var) or var.tape is not tape:
            return
        if var.index >= 0:
            prev = grads.get(var.index)
            grads[var.index] = g if prev is None else prev + g
        else:
            name = param_ids.get(id(var))
            if name is not None:
                pgrads[name] += g

    if root.index < 0:
        push(root, np.full(root.value.shape, float(seed)))
        return pgrads
    grads[root.index] = np.full(root.value.shape, float(seed))
    for i in range(root.index, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        _, parents, vjp = tape.entries[i]
        for parent, pg in zip(parents, vjp(g)):
            if pg is not None:
                push(parent, pg)
    return pgrads
