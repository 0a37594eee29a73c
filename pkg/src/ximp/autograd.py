"""Dense 2-D reverse-mode differentiation, Adam, and JSON checkpoints.

Every value is a float64 matrix. Each op records its parents and a backward
closure; :meth:`Tensor.backward` replays them in reverse topological order.
Constant operands (numpy arrays or scipy sparse matrices) may appear on the
left of :func:`matmul`, which is how fixed propagation matrices such as
correspondences and pooling operators enter the graph.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from ximp.errors import MissingGradient, NonFiniteValue, ShapeMismatch

CHECKPOINT_FORMAT_VERSION = 1


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None) -> None:
        v = np.array(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.shape != (1, 1):
                raise ShapeMismatch("backward() without a seed needs a 1x1 tensor")
            grad = np.ones((1, 1))
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    out._backward = backward if out.requires_grad else None
    return out


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


# --------------------------------------------------------------------------
# ops
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product. ``a`` may be a constant ndarray or scipy sparse matrix."""
    if not isinstance(a, Tensor):
        m = a
        b = _as_tensor(b)
        if m.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul {m.shape} @ {b.shape}")
        value = np.asarray(m @ b.value)
        mt = m.T

        def backward(g):
            return (np.asarray(mt @ g),)

        return _result(value, (b,), backward, "matmul")
    b = _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _result(av @ bv, (a, b), backward, "matmul")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def add(a, b) -> Tensor:
    """Elementwise sum; a 1 x d operand broadcasts over rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        ok = a.shape[1] == b.shape[1] and 1 in (a.shape[0], b.shape[0])
        if not ok:
            raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    sa, sb = a.shape, b.shape

    def backward(g):
        return (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return _result(a.value + b.value, (a, b), backward, "add")


def add_n(terms: Iterable[Tensor]) -> Tensor:
    terms = list(terms)
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub {a.shape} - {b.shape}")

    def backward(g):
        return (g, -g)

    return _result(a.value - b.value, (a, b), backward, "sub")


def scale(x: Tensor, s, offset: float = 0.0) -> Tensor:
    """``x * (offset + s)`` where ``s`` is a float or a learnable 1x1 tensor."""
    if not isinstance(s, Tensor):
        factor = offset + float(s)

        def backward_const(g):
            return (g * factor,)

        return _result(x.value * factor, (x,), backward_const, "scale")
    if s.shape != (1, 1):
        raise ShapeMismatch(f"scale factor must be 1x1, got {s.shape}")
    factor = offset + s.value[0, 0]
    xv = x.value

    def backward(g):
        return (g * factor, np.array([[np.sum(g * xv)]]))

    return _result(xv * factor, (x, s), backward, "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0

    def backward(g):
        return (g * mask,)

    return _result(x.value * mask, (x,), backward, "relu")


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.value)

    def backward(g):
        return (g * sign,)

    return _result(np.abs(x.value), (x,), backward, "abs")


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a 1 x d tensor."""
    m = x.shape[0]
    if m == 0:
        raise ShapeMismatch("mean_rows of an empty tensor")

    def backward(g):
        return (np.repeat(g / m, m, axis=0),)

    return _result(x.value.mean(axis=0, keepdims=True), (x,), backward, "mean_rows")


def mean_all(x: Tensor) -> Tensor:
    n = x.value.size

    def backward(g):
        return (np.full(x.shape, g[0, 0] / n),)

    return _result(np.array([[x.value.mean()]]), (x,), backward, "mean_all")


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.full(x.shape, g[0, 0]),)

    return _result(np.array([[x.value.sum()]]), (x,), backward, "sum_all")


def row_select(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]``."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, index, g)
        return (out,)

    return _result(x.value[index], (x,), backward, "row_select")


def scatter_add(x: Tensor, index, n_rows: int) -> Tensor:
    """Sum row ``j`` of ``x`` into output row ``index[j]``."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"scatter index length {index.shape[0]} != rows {x.shape[0]}")
    out = np.zeros((n_rows, x.shape[1]))
    np.add.at(out, index, x.value)

    def backward(g):
        return (g[index],)

    return _result(out, (x,), backward, "scatter_add")


def dropout(x: Tensor, mask: np.ndarray, p: float) -> Tensor:
    """Inverted dropout with a pre-drawn keep mask (True = keep)."""
    if mask.shape != x.shape:
        raise ShapeMismatch(f"dropout mask {mask.shape} vs {x.shape}")
    factor = mask.astype(np.float64) / (1.0 - p)

    def backward(g):
        return (g * factor,)

    return _result(x.value * factor, (x,), backward, "dropout")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols row counts differ: {sorted(rows)}")
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=1), tuple(parts), backward, "concat_cols")


# --------------------------------------------------------------------------
# parameters and optimizer
# --------------------------------------------------------------------------


class ParameterStore:
    """Named trainable tensors plus Adam moments; iterates in sorted-name order."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(value, name=name)
        self._params[name] = t
        self.first_moment[name] = np.zeros_like(t.value)
        self.second_moment[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.value.size for t in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = set(self._params) ^ set(state)
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._params[name].shape:
                raise ShapeMismatch(f"{name}: {value.shape} vs {self._params[name].shape}")
            self._params[name].value = value.copy()


def adam_step(
    params: ParameterStore,
    lr: float,
    weight_decay: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterStore:
    """One Adam update with decoupled weight decay, in sorted-name order."""
    for name, t in params.items():
        if t.grad is None:
            raise MissingGradient(f"parameter {name!r} has no gradient")
    params.step_count += 1
    step = params.step_count
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for name, t in params.items():
        g = t.grad
        m = params.first_moment[name] = beta1 * params.first_moment[name] + (1.0 - beta1) * g
        v = params.second_moment[name] = beta2 * params.second_moment[name] + (1.0 - beta2) * g * g
        if weight_decay:
            t.value = t.value - lr * weight_decay * t.value
        t.value = t.value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def checkpoint_dict(params: ParameterStore, config: dict, **extra) -> dict:
    out = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config,
        "parameters": {
            name: {"shape": list(t.shape), "values": [float(x) for x in t.value.ravel()]}
            for name, t in params.items()
        },
    }
    out.update(extra)
    return out


def dumps_checkpoint(ckpt: dict) -> str:
    return json.dumps(ckpt, sort_keys=True, indent=1)


def parameters_from_checkpoint(ckpt: dict) -> dict[str, np.ndarray]:
    if ckpt.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {ckpt.get('format_version')!r}")
    out = {}
    for name, entry in ckpt["parameters"].items():
        shape = tuple(entry["shape"])
        values = np.array(entry["values"], dtype=np.float64)
        if values.size != math.prod(shape):
            raise ShapeMismatch(f"{name}: {values.size} values for shape {shape}")
        out[name] = values.reshape(shape)
    return out


def as_sparse(m) -> sp.csr_matrix:
    return m if sp.issparse(m) else sp.csr_matrix(m)
