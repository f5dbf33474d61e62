"""Domain types and cost primitives for topic-to-server load balancing.

An assignment is stored as a vector of server indices (one entry per topic),
which keeps the one-server-per-topic constraint true by construction.
Traffic vectors and series are plain float arrays of shape ``(k,)`` and
``(T, k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Assignment = tuple[int, ...]


class ShapeError(ValueError):
    """Dimensions of an assignment, traffic vector or shape do not agree."""


class ParameterError(ValueError):
    """A numeric parameter is outside its admissible range."""


class CapacityError(RuntimeError):
    """A search space is larger than the configured limit."""


class NumericalError(RuntimeError):
    """A factorisation or linear solve failed."""


@dataclass(frozen=True)
class ProblemShape:
    k: int
    m: int
    unit_costs: tuple[float, ...]

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ShapeError(f"need k >= 1 and m >= 1, got k={self.k}, m={self.m}")
        u = tuple(float(c) for c in self.unit_costs)
        if len(u) != self.m:
            raise ShapeError(f"unit_costs has length {len(u)}, expected m={self.m}")
        if any(not math.isfinite(c) or c < 0 for c in u):
            raise ParameterError("unit switching costs must be finite and >= 0")
        object.__setattr__(self, "unit_costs", u)

    @property
    def u(self) -> np.ndarray:
        return np.asarray(self.unit_costs, dtype=float)

    @property
    def n_assignments(self) -> int:
        return self.m**self.k


def as_assignment(rows: Sequence[int], shape: ProblemShape) -> Assignment:
    """Validate ``rows`` against ``shape`` and return it as a tuple."""
    x = tuple(int(r) for r in rows)
    if len(x) != shape.k:
        raise ShapeError(f"assignment has {len(x)} rows, expected k={shape.k}")
    if any(r < 0 or r >= shape.m for r in x):
        raise ShapeError(f"assignment entries must lie in [0, {shape.m})")
    return x


def as_traffic(theta, k: int | None = None) -> np.ndarray:
    v = np.asarray(theta, dtype=float)
    if v.ndim != 1:
        raise ShapeError("traffic vector must be one-dimensional")
    if k is not None and v.shape[0] != k:
        raise ShapeError(f"traffic vector has length {v.shape[0]}, expected k={k}")
    return v


def as_series(series, k: int | None = None) -> np.ndarray:
    """Return a ``(T, k)`` float array, checking every row shares ``k``."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2:
        raise ShapeError("traffic series must be a 2-d array of shape (T, k)")
    if k is not None and arr.shape[1] != k:
        raise ShapeError(f"traffic series has {arr.shape[1]} topics, expected k={k}")
    return arr


def encode(x: Sequence[int], m: int) -> int:
    """Base-``m`` encoding with topic 0 as the most significant digit."""
    code = 0
    for r in x:
        code = code * m + int(r)
    return code


def decode(code: int, k: int, m: int) -> Assignment:
    rows = [0] * k
    for i in range(k - 1, -1, -1):
        code, rows[i] = divmod(code, m)
    return tuple(rows)


def server_loads(x: Sequence[int], theta, m: int) -> np.ndarray:
    return np.bincount(np.asarray(x, dtype=np.intp), weights=theta, minlength=m)


def one_hot(X: np.ndarray, m: int) -> np.ndarray:
    """``(N, k*m)`` float indicators; column ``i*m + j`` is ``X[:, i] == j``."""
    X = np.asarray(X, dtype=np.intp)
    out = np.zeros((X.shape[0], X.shape[1] * m))
    out[np.arange(X.shape[0])[:, None], np.arange(X.shape[1]) * m + X] = 1.0
    return out


_DIGITS: dict[tuple[int, int], np.ndarray] = {}


def digit_table(k: int, m: int) -> np.ndarray:
    """All ``m**k`` assignments of ``k`` topics, rows in increasing base-``m`` encoding order."""
    key = (k, m)
    if key not in _DIGITS:
        idx = np.arange(m**k)
        table = np.empty((m**k, k), dtype=np.intp)
        for i in range(k):
            table[:, i] = (idx // m ** (k - 1 - i)) % m
        table.setflags(write=False)
        _DIGITS[key] = table
    return _DIGITS[key]


def makespan(x: Sequence[int], theta, shape: ProblemShape) -> float:
    """Largest per-server load ``max_j sum_{i: x_i = j} theta_i``."""
    xs = as_assignment(x, shape)
    th = as_traffic(theta, shape.k)
    return float(server_loads(xs, th, shape.m).max())


def switching_cost(prev: Sequence[int], nxt: Sequence[int], shape: ProblemShape) -> float:
    """``1^T |x - y| u``: each moved topic pays both the old and the new server's unit cost."""
    a = as_assignment(prev, shape)
    b = as_assignment(nxt, shape)
    u = shape.unit_costs
    return float(sum(u[i] + u[j] for i, j in zip(a, b) if i != j))


def step_cost(prev, nxt, theta, shape: ProblemShape) -> float:
    return makespan(nxt, theta, shape) + switching_cost(prev, nxt, shape)


def max_switching_cost(shape: ProblemShape) -> float:
    """Largest switching cost between any two assignments: every topic moves between the two dearest servers."""
    if shape.m < 2:
        return 0.0
    top = sorted(shape.unit_costs, reverse=True)
    return shape.k * (top[0] + top[1])


def lipschitz_constant(shape: ProblemShape) -> float:
    """Euclidean Lipschitz constant of the makespan in the traffic vector."""
    return math.sqrt(shape.k)


class MakespanCost:
    """Makespan imbalance plus linear switching cost on a :class:`ProblemShape`.

    Solvers and online algorithms only talk to this interface, so other
    per-step costs over the same finite decision set (for instance the
    one-dimensional adversarial instance in :mod:`smooco.bounds`) can be
    plugged in by subclassing.
    """

    def __init__(self, shape: ProblemShape):
        self.shape = shape
        self._u = shape.u

    @property
    def k(self) -> int:
        return self.shape.k

    @property
    def m(self) -> int:
        return self.shape.m

    @property
    def lipschitz(self) -> float:
        return lipschitz_constant(self.shape)

    @property
    def max_switch(self) -> float:
        return max_switching_cost(self.shape)

    def objective(self, x, theta) -> float:
        return float(server_loads(x, theta, self.m).max())

    def switching(self, x, y) -> float:
        u = self.shape.unit_costs
        return float(sum(u[i] + u[j] for i, j in zip(x, y) if i != j))

    def step(self, prev, x, theta) -> float:
        return self.objective(x, theta) + self.switching(prev, x)

    def objective_many(self, X: np.ndarray, thetas, weights=None) -> np.ndarray:
        """Weighted sum of makespans for every candidate row of ``X``; ``thetas`` is ``(n, k)``."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        w = np.ones(len(thetas)) if weights is None else np.asarray(weights, dtype=float)
        oh = one_hot(X, self.m).reshape(len(X), self.k, self.m)
        loads = np.einsum("nkm,bk->nbm", oh, thetas)
        return loads.max(axis=2) @ w

    def switching_many(self, X: np.ndarray, y) -> np.ndarray:
        X = np.asarray(X, dtype=np.intp)
        y = np.asarray(y, dtype=np.intp)
        return ((X != y) * (self._u[X] + self._u[y])).sum(axis=1)

    def enumerate_objective(self, thetas, weights=None, neighbors=()) -> np.ndarray:
        """``sum_b w_b f(x, theta_b) + sum_(c, y) c d(x, y)`` for all ``m**k`` assignments.

        Values come in increasing base-``m`` encoding order.  Loads and
        switching costs are additive over topics, so the topics are split in
        two halves and the full table is an outer sum of two small ones.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        w = np.ones(len(thetas)) if weights is None else np.asarray(weights, dtype=float)
        k, m = self.k, self.m
        k1 = k // 2
        head, tail = digit_table(k1, m), digit_table(k - k1, m)
        oh_h = one_hot(head, m).reshape(len(head), k1, m)
        oh_t = one_hot(tail, m).reshape(len(tail), k - k1, m)
        total = np.zeros((len(head), len(tail)))
        mx = np.empty_like(total)
        for wb, th in zip(w, thetas):
            lh = np.einsum("nkm,k->nm", oh_h, th[:k1])
            lt = np.einsum("nkm,k->nm", oh_t, th[k1:])
            np.add(lh[:, 0, None], lt[None, :, 0], out=mx)
            for j in range(1, m):
                np.maximum(mx, lh[:, j, None] + lt[None, :, j], out=mx)
            total += wb * mx if wb != 1.0 else mx
        for c, y in neighbors:
            if not c:
                continue
            y = np.asarray(y, dtype=np.intp)
            total += c * (self.switching_many(head, y[:k1])[:, None] + self.switching_many(tail, y[k1:])[None, :])
        return total.ravel()

    def relaxed_objective(self, R: np.ndarray, theta) -> float:
        return float((np.asarray(theta) @ R).max())

    def relaxed_subgradient(self, R: np.ndarray, theta) -> np.ndarray:
        """Subgradient of ``max_j sum_i R_ij theta_i``: ``theta`` in the busiest column (lowest index on ties)."""
        theta = np.asarray(theta, dtype=float)
        g = np.zeros_like(R, dtype=float)
        j = int(np.argmax(theta @ R))
        g[:, j] = theta
        return g
