"""Minimal dense fp64 tensor kernel with reverse-mode gradients.

Tape-style autodiff: each op records its parents and a backward closure;
``Tensor.backward()`` runs the closures in reverse topological order and
accumulates gradients additively. A central-difference harness
(``grad_check``) verifies the analytic gradients.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericsError(Exception):
    pass


class ShapeMismatch(NumericsError):
    pass


class EmptyVector(NumericsError):
    pass


class BadLabel(NumericsError):
    pass


class NonFiniteLoss(NumericsError):
    pass


class Tensor:
    """A dense float64 array plus optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward_fn", "_needs")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn
        self._needs = requires_grad or any(p._needs for p in parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        if self.value.size != 1:
            raise NumericsError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._needs and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (forward values only)."""

    def __enter__(self) -> None:
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc) -> None:
        global _grad_enabled
        _grad_enabled = self._prev


def _op(value: np.ndarray, parents: tuple[Tensor, ...],
        backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    if not _grad_enabled or not any(p._needs for p in parents):
        return Tensor(value)
    return Tensor(value, parents=parents, backward_fn=backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.value.ndim not in (1, 2) or b.value.ndim != 2:
        raise ShapeMismatch(f"matmul expects (vector|matrix) @ matrix, got {a.shape} @ {b.shape}")
    if a.value.shape[-1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def backward(g: np.ndarray) -> None:
        if a._needs:
            a.accumulate(g @ b.value.T)
        if b._needs:
            if a.value.ndim == 1:
                b.accumulate(np.outer(a.value, g))
            else:
                b.accumulate(a.value.T @ g)

    return _op(out, (a, b), backward)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    try:
        out = a.value + b.value
    except ValueError as exc:
        raise ShapeMismatch(f"add shapes incompatible: {a.shape} + {b.shape}") from exc

    def backward(g: np.ndarray) -> None:
        if a._needs:
            a.accumulate(_reduce_to(g, a.value.shape))
        if b._needs:
            b.accumulate(_reduce_to(g, b.value.shape))

    return _op(out, (a, b), backward)


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a python scalar or a size-1 tensor (learnable scalar)."""
    x = _tensor(x)
    if isinstance(c, Tensor):
        if c.value.size != 1:
            raise ShapeMismatch(f"scale factor must be scalar, got shape {c.shape}")
        cv = float(c.value)
        out = x.value * cv

        def backward(g: np.ndarray) -> None:
            if x._needs:
                x.accumulate(g * cv)
            if c._needs:
                c.accumulate(np.full_like(c.value, np.sum(g * x.value)))

        return _op(out, (x, c), backward)

    cv = float(c)
    out = x.value * cv

    def backward_const(g: np.ndarray) -> None:
        if x._needs:
            x.accumulate(g * cv)

    return _op(out, (x,), backward_const)


def relu(x: Tensor) -> Tensor:
    x = _tensor(x)
    mask = x.value > 0.0
    out = np.where(mask, x.value, 0.0)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return _op(out, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_tensor(x) for x in xs]
    if not xs:
        raise ShapeMismatch("concat of zero tensors")
    out = np.concatenate([x.value for x in xs], axis=axis)
    sizes = [x.value.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for x, start, stop in zip(xs, offsets[:-1], offsets[1:]):
            if x._needs:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                x.accumulate(g[tuple(sl)])

    return _op(out, tuple(xs), backward)


def mean_rows(x: Tensor) -> Tensor:
    x = _tensor(x)
    if x.value.ndim != 2 or x.value.shape[0] == 0:
        raise ShapeMismatch(f"mean_rows expects a non-empty matrix, got {x.shape}")
    n = x.value.shape[0]
    out = x.value.mean(axis=0)

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.broadcast_to(g / n, x.value.shape))

    return _op(out, (x,), backward)


def rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows (axis 0); backward scatter-adds, so repeated indices are fine."""
    x = _tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = x.value[idx]

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        x.accumulate(gx)

    return _op(out, (x,), backward)


def place_rows(x: Tensor, positions: np.ndarray, n_rows: int) -> Tensor:
    """Scatter rows of x into a zero matrix at disjoint row positions."""
    x = _tensor(x)
    positions = np.asarray(positions, dtype=np.intp)
    shape = (n_rows,) + x.value.shape[1:]
    out = np.zeros(shape, dtype=np.float64)
    out[positions] = x.value

    def backward(g: np.ndarray) -> None:
        x.accumulate(g[positions])

    return _op(out, (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = _tensor(x)
    out = x.value[:, start:stop]

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.value)
        gx[:, start:stop] = g
        x.accumulate(gx)

    return _op(out, (x,), backward)


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row dot product of two equal-shape matrices -> vector."""
    a, b = _tensor(a), _tensor(b)
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"rowdot shapes differ: {a.shape} vs {b.shape}")
    out = np.einsum("ij,ij->i", a.value, b.value)

    def backward(g: np.ndarray) -> None:
        if a._needs:
            a.accumulate(g[:, None] * b.value)
        if b._needs:
            b.accumulate(g[:, None] * a.value)

    return _op(out, (a, b), backward)


def colscale(x: Tensor, w: Tensor) -> Tensor:
    """Scale each row of x by the matching entry of vector w."""
    x, w = _tensor(x), _tensor(w)
    if x.value.shape[0] != w.value.shape[0] or w.value.ndim != 1:
        raise ShapeMismatch(f"colscale shapes incompatible: {x.shape} vs {w.shape}")
    out = x.value * w.value[:, None]

    def backward(g: np.ndarray) -> None:
        if x._needs:
            x.accumulate(g * w.value[:, None])
        if w._needs:
            w.accumulate(np.einsum("ij,ij->i", g, x.value))

    return _op(out, (x, w), backward)


def segment_softmax(scores: Tensor, segments: Sequence[tuple[int, int]]) -> Tensor:
    """Stable softmax within each contiguous [start, stop) segment of a vector."""
    scores = _tensor(scores)
    v = scores.value
    out = np.empty_like(v)
    for start, stop in segments:
        seg = v[start:stop]
        e = np.exp(seg - seg.max())
        out[start:stop] = e / e.sum()

    def backward(g: np.ndarray) -> None:
        gx = np.empty_like(v)
        for start, stop in segments:
            w = out[start:stop]
            gs = g[start:stop]
            gx[start:stop] = w * (gs - np.dot(gs, w))
        scores.accumulate(gx)

    return _op(out, (scores,), backward)


def segment_sum(x: Tensor, segments: Sequence[tuple[int, int]],
                target_rows: np.ndarray, n_rows: int) -> Tensor:
    """Sum contiguous row segments of x into rows of an (n_rows, d) zero matrix."""
    x = _tensor(x)
    target_rows = np.asarray(target_rows, dtype=np.intp)
    out = np.zeros((n_rows, x.value.shape[1]), dtype=np.float64)
    for (start, stop), row in zip(segments, target_rows):
        out[row] = x.value[start:stop].sum(axis=0)

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.value)
        for (start, stop), row in zip(segments, target_rows):
            gx[start:stop] = g[row]
        x.accumulate(gx)

    return _op(out, (x,), backward)


def softmax(v: Tensor) -> Tensor:
    """Stable softmax of a vector (max-subtracted)."""
    v = _tensor(v)
    if v.value.ndim != 1 or v.value.size == 0:
        raise EmptyVector(f"softmax expects a non-empty vector, got shape {v.shape}")
    e = np.exp(v.value - v.value.max())
    out = e / e.sum()

    def backward(g: np.ndarray) -> None:
        v.accumulate(out * (g - np.dot(g, out)))

    return _op(out, (v,), backward)


def cross_entropy(probs: Tensor, label: int) -> Tensor:
    """Negative log probability of the label class, clamped at 1e-12."""
    probs = _tensor(probs)
    if not (0 <= label < probs.value.shape[0]):
        raise BadLabel(f"label {label} out of range for {probs.value.shape[0]} classes")
    p = max(float(probs.value[label]), 1e-12)
    out = np.asarray(-math.log(p))

    def backward(g: np.ndarray) -> None:
        gp = np.zeros_like(probs.value)
        gp[label] = -float(g) / p
        probs.accumulate(gp)

    return _op(out, (probs,), backward)


class ParamStore:
    """Ordered, uniquely-named collection of learnable tensors."""

    def __init__(self) -> None:
        self._items: dict[str, Tensor] = {}

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self._items:
            raise NumericsError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value, requires_grad=requires_grad)
        t.requires_grad = requires_grad
        t._needs = True
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._items.items()

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.zero_grad()

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._items.items():
            out.add(name, t.value.copy())
        return out

    def n_params(self) -> int:
        return sum(t.value.size for t in self._items.values())


class GradCheckReport:
    """Result of comparing reverse-mode gradients to central differences."""

    def __init__(self, max_rel_error: float, worst_param: str,
                 per_param: dict[str, float]) -> None:
        self.max_rel_error = max_rel_error
        self.worst_param = worst_param
        self.per_param = per_param


def grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore,
               eps: float = 1e-5, max_per_param: int | None = None,
               sample_seed: int = 0) -> GradCheckReport:
    """Compare the reverse-mode gradient of f against central finite differences.

    Relative error per entry: |analytic - numeric| / max(1, |analytic|, |numeric|).
    When max_per_param is given, at most that many entries of each parameter
    tensor are perturbed, drawn without replacement from a seeded generator.
    """
    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.value):
        raise NonFiniteLoss("loss is not finite at the given parameters")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value))
        for name, t in params.items()
    }

    sampler = np.random.default_rng(sample_seed)
    max_rel = 0.0
    worst = ""
    per_param: dict[str, float] = {}
    for name, t in params.items():
        flat = t.value.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        if max_per_param is not None and flat.size > max_per_param:
            indices = sorted(sampler.choice(flat.size, size=max_per_param,
                                            replace=False).tolist())
        else:
            indices = range(flat.size)
        local_max = 0.0
        for i in indices:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = float(f(params).value)
                flat[i] = orig - eps
                f_minus = float(f(params).value)
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NonFiniteLoss(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(a_flat[i])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            local_max = max(local_max, rel)
        per_param[name] = local_max
        if local_max >= max_rel:
            max_rel = local_max
            worst = name
    return GradCheckReport(max_rel, worst, per_param)
