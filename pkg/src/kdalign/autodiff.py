"""Reverse-mode automatic differentiation over dense float64 matrices.

A Tape records primitive applications append-only; ``backward`` runs one
reverse topological sweep and returns exact adjoints for every node.  Every
value is a 2-D float64 array (scalars are 1x1); there is no implicit
broadcasting beyond the explicit broadcast_row / broadcast_col primitives.
The only saturating primitive is the eps-shifted log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

LOG_SHIFT = 1e-30


def as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return arr


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class _Record:
    op: str
    inputs: tuple[int, ...]
    aux: object = None


class Tape:
    """Append-only record of primitive applications.

    Node ids index both the recorded ops and their forward values.  Values
    are never mutated after recording; repeated ``backward`` calls on the
    same tape return identical gradients.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._records: list[_Record] = []

    def __len__(self) -> int:
        return len(self._values)

    def value(self, nid: int) -> np.ndarray:
        return self._values[nid]

    def _push(self, value: np.ndarray, op: str, inputs: tuple[int, ...], aux=None) -> int:
        self._values.append(value)
        self._records.append(_Record(op, inputs, aux))
        return len(self._values) - 1

    def leaf(self, value) -> int:
        return self._push(as_matrix(value).copy(), "leaf", ())

    # -- primitives ---------------------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        va, vb = self._values[a], self._values[b]
        if va.shape[1] != vb.shape[0]:
            raise ShapeError(f"matmul {va.shape} @ {vb.shape}")
        return self._push(va @ vb, "matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        self._check_same_shape(a, b, "add")
        return self._push(self._values[a] + self._values[b], "add", (a, b))

    def sub(self, a: int, b: int) -> int:
        self._check_same_shape(a, b, "sub")
        return self._push(self._values[a] - self._values[b], "sub", (a, b))

    def hadamard(self, a: int, b: int) -> int:
        self._check_same_shape(a, b, "hadamard")
        return self._push(self._values[a] * self._values[b], "hadamard", (a, b))

    def smul(self, a: int, scalar: float) -> int:
        return self._push(self._values[a] * float(scalar), "smul", (a,), float(scalar))

    def exp(self, a: int) -> int:
        return self._push(np.exp(self._values[a]), "exp", (a,))

    def log(self, a: int) -> int:
        v = self._values[a]
        if np.any(v < 0.0):
            raise NumericError("log of negative value")
        return self._push(np.log(v + LOG_SHIFT), "log", (a,))

    def relu(self, a: int) -> int:
        return self._push(np.maximum(self._values[a], 0.0), "relu", (a,))

    def sigmoid(self, a: int) -> int:
        return self._push(stable_sigmoid(self._values[a]), "sigmoid", (a,))

    def row_sum(self, a: int) -> int:
        return self._push(self._values[a].sum(axis=1, keepdims=True), "row_sum", (a,))

    def col_sum(self, a: int) -> int:
        return self._push(self._values[a].sum(axis=0, keepdims=True), "col_sum", (a,))

    def broadcast_row(self, a: int, rows: int) -> int:
        v = self._values[a]
        if v.shape[0] != 1:
            raise ShapeError(f"broadcast_row expects a 1xM row, got {v.shape}")
        return self._push(np.repeat(v, rows, axis=0), "broadcast_row", (a,), rows)

    def broadcast_col(self, a: int, cols: int) -> int:
        v = self._values[a]
        if v.shape[1] != 1:
            raise ShapeError(f"broadcast_col expects an Nx1 column, got {v.shape}")
        return self._push(np.repeat(v, cols, axis=1), "broadcast_col", (a,), cols)

    def transpose(self, a: int) -> int:
        return self._push(self._values[a].T.copy(), "transpose", (a,))

    def square(self, a: int) -> int:
        return self._push(self._values[a] ** 2, "square", (a,))

    def reduce_mean(self, a: int) -> int:
        return self._push(np.array([[self._values[a].mean()]]), "reduce_mean", (a,))

    def softplus(self, a: int) -> int:
        return self._push(np.logaddexp(0.0, self._values[a]), "softplus", (a,))

    def concat_rows(self, ids: list[int]) -> int:
        vals = [self._values[i] for i in ids]
        cols = {v.shape[1] for v in vals}
        if len(cols) != 1:
            raise ShapeError(f"concat_rows with mixed column counts {cols}")
        return self._push(np.vstack(vals), "concat_rows", tuple(ids))

    def _check_same_shape(self, a: int, b: int, op: str) -> None:
        if self._values[a].shape != self._values[b].shape:
            raise ShapeError(f"{op} {self._values[a].shape} vs {self._values[b].shape}")

    # -- composites ---------------------------------------------------------

    def full_sum(self, a: int) -> int:
        return self.col_sum(self.row_sum(a))

    def scalar(self, value: float) -> int:
        return self.leaf(np.array([[float(value)]]))

    # -- reverse sweep ------------------------------------------------------

    def backward(self, loss: int) -> list[np.ndarray | None]:
        """Adjoints of every node with respect to a scalar loss node.

        Returns a list indexed by node id; entries are None for nodes the
        loss does not depend on.
        """
        if self._values[loss].shape != (1, 1):
            raise ShapeError(f"loss node must be 1x1, got {self._values[loss].shape}")
        adj: list[np.ndarray | None] = [None] * len(self._values)
        adj[loss] = np.ones((1, 1))
        for nid in range(loss, -1, -1):
            g = adj[nid]
            if g is None:
                continue
            rec = self._records[nid]
            self._accumulate(rec, nid, g, adj)
        return adj

    def _accumulate(self, rec: _Record, nid: int, g: np.ndarray, adj) -> None:
        op = rec.op
        if op == "leaf":
            return
        ins = rec.inputs

        def bump(target: int, grad: np.ndarray) -> None:
            if adj[target] is None:
                adj[target] = np.zeros_like(self._values[target])
            adj[target] += grad

        if op == "matmul":
            a, b = ins
            bump(a, g @ self._values[b].T)
            bump(b, self._values[a].T @ g)
        elif op == "add":
            bump(ins[0], g)
            bump(ins[1], g)
        elif op == "sub":
            bump(ins[0], g)
            bump(ins[1], -g)
        elif op == "hadamard":
            a, b = ins
            bump(a, g * self._values[b])
            bump(b, g * self._values[a])
        elif op == "smul":
            bump(ins[0], g * rec.aux)
        elif op == "exp":
            bump(ins[0], g * self._values[nid])
        elif op == "log":
            bump(ins[0], g / (self._values[ins[0]] + LOG_SHIFT))
        elif op == "relu":
            bump(ins[0], g * (self._values[ins[0]] > 0.0))
        elif op == "sigmoid":
            s = self._values[nid]
            bump(ins[0], g * s * (1.0 - s))
        elif op == "row_sum":
            bump(ins[0], np.repeat(g, self._values[ins[0]].shape[1], axis=1))
        elif op == "col_sum":
            bump(ins[0], np.repeat(g, self._values[ins[0]].shape[0], axis=0))
        elif op == "broadcast_row":
            bump(ins[0], g.sum(axis=0, keepdims=True))
        elif op == "broadcast_col":
            bump(ins[0], g.sum(axis=1, keepdims=True))
        elif op == "transpose":
            bump(ins[0], g.T)
        elif op == "square":
            bump(ins[0], 2.0 * g * self._values[ins[0]])
        elif op == "reduce_mean":
            v = self._values[ins[0]]
            bump(ins[0], np.full(v.shape, g[0, 0] / v.size))
        elif op == "softplus":
            bump(ins[0], g * stable_sigmoid(self._values[ins[0]]))
        elif op == "concat_rows":
            start = 0
            for target in ins:
                rows = self._values[target].shape[0]
                bump(target, g[start : start + rows])
                start += rows
        else:  # pragma: no cover - exhaustive dispatch
            raise ValueError(f"unknown op {op!r}")


@dataclass
class ParamSet:
    """Named parameter matrices with a parallel gradient map."""

    values: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.values = {k: as_matrix(v) for k, v in self.values.items()}
        if not self.grads:
            self.zero_grads()

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.values.items()})

    def names(self) -> list[str]:
        return list(self.values)


def bind_params(tape: Tape, params: ParamSet) -> dict[str, int]:
    return {name: tape.leaf(value) for name, value in params.values.items()}


def accumulate_grads(params: ParamSet, ids: dict[str, int], adjoints) -> None:
    for name, nid in ids.items():
        g = adjoints[nid]
        if g is not None:
            params.grads[name] += g


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(err <= self.tol for err in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(build_fn, params: ParamSet, h: float = 1e-6, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape adjoints against central finite differences.

    ``build_fn(tape, ids)`` must deterministically construct a scalar loss
    from bound parameter nodes.  Relative error per element is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    tape = Tape()
    ids = bind_params(tape, params)
    loss = build_fn(tape, ids)
    adjoints = tape.backward(loss)

    def loss_value(values: dict[str, np.ndarray]) -> float:
        t = Tape()
        probe = ParamSet({k: v for k, v in values.items()})
        pid = bind_params(t, probe)
        return float(t.value(build_fn(t, pid))[0, 0])

    report: dict[str, float] = {}
    for name in params.names():
        analytic = adjoints[ids[name]]
        if analytic is None:
            analytic = np.zeros_like(params.values[name])
        worst = 0.0
        base = {k: v.copy() for k, v in params.values.items()}
        flat = base[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value(base)
            flat[i] = orig - h
            down = loss_value(base)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            denom = max(1.0, abs(a), abs(numeric))
            worst = max(worst, abs(a - numeric) / denom)
        report[name] = worst
    return GradCheckReport(report, tol)
