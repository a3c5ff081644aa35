"""Minimal reverse-mode differentiation engine.

Supports exactly what small choice-model MLPs need: affine layers, relu,
masked softmax heads, column selection/concatenation, and scalar reductions.
All arithmetic is float64. Ops record their adjoints on the active Tape (if
one is open); ``backward`` replays them in reverse execution order, which is
a valid topological order because every op's inputs are created before its
output. Forward evaluation without an open tape records nothing and is safe
to run concurrently as long as parameters are frozen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, StructuralError, UsageError

Array = np.ndarray


class Tensor:
    """A float64 array plus an optional gradient and adjoint closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.data = np.asarray(values, dtype=np.float64)
        self.grad: Array | None = None  # None means zero
        self.requires_grad = requires_grad
        self._backward: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise StructuralError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate(self, g: Array) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def grad_array(self) -> Array:
        """Gradient with the tensor's own shape; zeros if nothing flowed."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_TAPES: list["Tape"] = []


class Tape:
    """Execution-order record of one forward pass.

    Also collects the activation pattern of every relu/hinge evaluated under
    it (``signature``), which lets finite-difference checks detect when a
    perturbation crossed a kink.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []
        self.signature: list[Array] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPES.pop()

    def record(self, node: Tensor) -> None:
        self._nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every recorded input; consumes the tape."""
    if tape._consumed:
        raise UsageError("tape already consumed by a previous backward()")
    if loss.data.size != 1:
        raise StructuralError(f"loss must be scalar, got shape {loss.shape}")
    if not tape._nodes or loss._backward is None:
        raise UsageError("backward() without a recorded forward pass")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape._nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    tape._consumed = True
    tape._nodes.clear()


def _maybe_record(out: Tensor, needs_grad: bool, adjoint: Callable[[Array], None]) -> None:
    tape = _active_tape()
    if tape is not None and needs_grad:
        out.requires_grad = True
        out._backward = adjoint
        tape.record(out)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias for x:[batch, in], weight:[in, out], bias:[out]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise StructuralError(
            f"affine expects 2d x, 2d weight, 1d bias; got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.data.shape[1] != weight.data.shape[0] or weight.data.shape[1] != bias.data.shape[0]:
        raise StructuralError(
            f"affine shapes do not conform: {x.shape} @ {weight.shape} + {bias.shape}"
        )
    out = Tensor(x.data @ weight.data + bias.data)

    def adjoint(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate(x.data.T @ g)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    _maybe_record(out, x.requires_grad or weight.requires_grad or bias.requires_grad, adjoint)
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0))
    tape = _active_tape()
    if tape is not None:
        tape.signature.append(mask)

    def adjoint(g: Array) -> None:
        x.accumulate(g * mask)

    _maybe_record(out, x.requires_grad, adjoint)
    return out


# A hinge penalty max(0, z) is the same primitive as relu; the alias keeps
# call sites readable.
hinge = relu


def masked_softmax(scores: Tensor, avail) -> Tensor:
    """Row-wise softmax over available alternatives; unavailable ones get 0.

    Stabilized by subtracting each row's maximum available score.
    """
    mask = np.asarray(avail, dtype=bool)
    if scores.data.ndim != 2 or mask.shape != scores.data.shape:
        raise StructuralError(
            f"masked_softmax expects matching 2d shapes; got {scores.shape} and {mask.shape}"
        )
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise DomainError(f"row {bad} has no available alternative")
    neg_inf = np.where(mask, scores.data, -np.inf)
    shifted = neg_inf - neg_inf.max(axis=1, keepdims=True)
    exps = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    probs = exps / exps.sum(axis=1, keepdims=True)
    out = Tensor(probs)

    def adjoint(g: Array) -> None:
        inner = (g * probs).sum(axis=1, keepdims=True)
        scores.accumulate(probs * (g - inner))

    _maybe_record(out, scores.requires_grad, adjoint)
    return out


def nll(probs: Tensor, chosen) -> Tensor:
    """Sum over the batch of -log(probability of the chosen alternative).

    ``chosen`` holds 0-based column indices. Log arguments are floored at
    1e-300; an exactly-zero chosen probability (an unavailable choice) is a
    domain error.
    """
    idx = np.asarray(chosen, dtype=np.intp)
    n, c = probs.data.shape
    if idx.shape != (n,):
        raise StructuralError(f"chosen must have shape ({n},), got {idx.shape}")
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= c:
        raise StructuralError("chosen index out of range")
    rows = np.arange(n)
    p = probs.data[rows, idx]
    if np.any(p == 0.0):
        bad = int(np.flatnonzero(p == 0.0)[0])
        raise DomainError(f"chosen alternative has zero probability at row {bad}")
    out = Tensor(-np.log(np.maximum(p, 1e-300)).sum())

    def adjoint(g: Array) -> None:
        gp = np.zeros_like(probs.data)
        gp[rows, idx] = -float(g) / p
        probs.accumulate(gp)

    _maybe_record(out, probs.requires_grad, adjoint)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise StructuralError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def adjoint(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    _maybe_record(out, a.requires_grad or b.requires_grad, adjoint)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise StructuralError(f"sub shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)

    def adjoint(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    _maybe_record(out, a.requires_grad or b.requires_grad, adjoint)
    return out


def scale(x: Tensor, k: float) -> Tensor:
    k = float(k)
    out = Tensor(x.data * k)

    def adjoint(g: Array) -> None:
        x.accumulate(g * k)

    _maybe_record(out, x.requires_grad, adjoint)
    return out


def mul_const(x: Tensor, c) -> Tensor:
    """Elementwise multiply by a constant array (e.g. a sparsity mask)."""
    const = np.asarray(c, dtype=np.float64)
    out = Tensor(x.data * const)

    def adjoint(g: Array) -> None:
        x.accumulate(g * const)

    _maybe_record(out, x.requires_grad, adjoint)
    return out


def select_col(x: Tensor, j: int) -> Tensor:
    """Column j of a 2d tensor as a [batch, 1] tensor."""
    if x.data.ndim != 2 or not 0 <= j < x.data.shape[1]:
        raise StructuralError(f"select_col({j}) on shape {x.shape}")
    out = Tensor(x.data[:, j : j + 1])

    def adjoint(g: Array) -> None:
        gx = np.zeros_like(x.data)
        gx[:, j : j + 1] = g
        x.accumulate(gx)

    _maybe_record(out, x.requires_grad, adjoint)
    return out


def select_rows(x: Tensor, lo: int, hi: int) -> Tensor:
    """Contiguous row slice [lo, hi) of a 2d tensor."""
    if x.data.ndim != 2 or not 0 <= lo < hi <= x.data.shape[0]:
        raise StructuralError(f"select_rows({lo}, {hi}) on shape {x.shape}")
    out = Tensor(x.data[lo:hi])

    def adjoint(g: Array) -> None:
        gx = np.zeros_like(x.data)
        gx[lo:hi] = g
        x.accumulate(gx)

    _maybe_record(out, x.requires_grad, adjoint)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2d tensors with equal row counts along axis 1."""
    if not parts:
        raise StructuralError("concat_cols of nothing")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise StructuralError("concat_cols parts must be 2d with equal row counts")
    widths = [p.data.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    edges = np.cumsum([0] + widths)

    def adjoint(g: Array) -> None:
        for p, lo, hi in zip(parts, edges[:-1], edges[1:]):
            if p.requires_grad:
                p.accumulate(g[:, lo:hi])

    _maybe_record(out, any(p.requires_grad for p in parts), adjoint)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def adjoint(g: Array) -> None:
        x.accumulate(np.broadcast_to(g, x.data.shape).copy())

    _maybe_record(out, x.requires_grad, adjoint)
    return out


class ParameterStore:
    """Named trainable tensors with seeded initialization.

    Parameter mutation (gradient accumulation, optimizer steps, restore) has
    a single-writer contract; concurrent readers must hold parameters frozen.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape: Iterable[int], init: str = "zeros") -> Tensor:
        if name in self._params:
            raise UsageError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "fan_in_uniform":
            # He-style: uniform with limit sqrt(6 / fan_in)
            fan_in = shape[0]
            limit = np.sqrt(6.0 / fan_in)
            data = self._rng.uniform(-limit, limit, size=shape)
        else:
            raise UsageError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradient(self, name: str) -> Array:
        return self._params[name].grad_array()

    def snapshot(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def restore(self, snap: dict[str, Array]) -> None:
        for name, data in snap.items():
            self._params[name].data = data.copy()


@dataclass
class FiniteDifferenceReport:
    max_rel_error: float
    checked: int
    excluded: int  # perturbing these crossed a relu/hinge kink


def finite_difference_report(
    fn: Callable[[], Tensor], store: ParameterStore, step: float
) -> FiniteDifferenceReport:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` must rerun the same forward pass on the store's current values and
    must not consume any random stream. A parameter element whose +-step
    perturbation flips any relu/hinge activation is excluded: a central
    difference across a kink does not estimate the one-sided derivative.
    """
    if step <= 0:
        raise DomainError("step must be positive")

    store.zero_grad()
    with Tape() as tape:
        loss = fn()
        base_sig = list(tape.signature)
        backward(tape, loss)
    if not np.isfinite(loss.data).all():
        raise DomainError("loss is not finite at the base point")
    analytic = {name: store.gradient(name).copy() for name in store.names()}

    def probe() -> tuple[float, list[Array]]:
        with Tape() as t:
            value = fn()
            return float(value.data.reshape(())), t.signature

    max_rel = 0.0
    checked = 0
    excluded = 0
    for name, tensor in store.items():
        flat = tensor.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus, sig_plus = probe()
            flat[i] = orig - step
            f_minus, sig_minus = probe()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise DomainError(f"non-finite loss while perturbing {name}[{i}]")
            if _signature_differs(base_sig, sig_plus) or _signature_differs(base_sig, sig_minus):
                excluded += 1
                continue
            central = (f_plus - f_minus) / (2.0 * step)
            rel = abs(grad_flat[i] - central) / max(1.0, abs(central))
            if rel > max_rel:
                max_rel = rel
            checked += 1
    return FiniteDifferenceReport(max_rel, checked, excluded)


def finite_difference_check(fn: Callable[[], Tensor], store: ParameterStore, step: float) -> float:
    """Max relative error |analytic - central| / max(1, |central|) over parameters."""
    return finite_difference_report(fn, store, step).max_rel_error


def _signature_differs(a: list[Array], b: list[Array]) -> bool:
    if len(a) != len(b):
        return True
    return any(not np.array_equal(x, y) for x, y in zip(a, b))
