"""Offline planners for a finite window with switching cost.

* :func:`exact_plan_dp` -- dynamic programming over all assignments (small ``m**k``).
* :func:`iterative_plan` -- temporal decoupling: repeatedly re-solve one step
  with its neighbours fixed, relaxed weight on the switching terms until the
  last pass.
* :func:`solve_subproblem` -- the single-step problem, by enumeration or local search.

Ties are always broken towards the smallest base-``m`` encoding, which is the
row order of :func:`smooco.core.digit_table`.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    Assignment,
    CapacityError,
    MakespanCost,
    ParameterError,
    ProblemShape,
    ShapeError,
    as_assignment,
    as_series,
    digit_table,
    encode,
)

ENUMERATION_LIMIT = 60_000
DP_STATE_LIMIT = 1024


_PAIRWISE: dict[tuple, np.ndarray] = {}


def pairwise_switching(model: MakespanCost) -> np.ndarray:
    """``D[a, b] = d(x_a, x_b)`` over all assignments in encoding order (cached per model type and ``u``)."""
    key = (type(model).__name__, model.k, model.m, model.shape.unit_costs)
    if key not in _PAIRWISE:
        codes = digit_table(model.k, model.m)
        _PAIRWISE[key] = np.stack([model.switching_many(codes, row) for row in codes])
    return _PAIRWISE[key]


@dataclass(frozen=True)
class PlanningProblem:
    shape: ProblemShape
    thetas: np.ndarray
    initial: Assignment
    model: MakespanCost | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        th = as_series(self.thetas, self.shape.k)
        if len(th) < 1:
            raise ShapeError("planning problem needs at least one step")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "initial", as_assignment(self.initial, self.shape))
        if self.model is None:
            object.__setattr__(self, "model", MakespanCost(self.shape))

    @property
    def S(self) -> int:
        return len(self.thetas)

    def to_json(self) -> str:
        return json.dumps({
            "k": self.shape.k,
            "m": self.shape.m,
            "unit_costs": list(self.shape.unit_costs),
            "thetas": self.thetas.tolist(),
            "initial": list(self.initial),
        })

    @classmethod
    def from_json(cls, text: str) -> "PlanningProblem":
        d = json.loads(text)
        shape = ProblemShape(int(d["k"]), int(d["m"]), tuple(d["unit_costs"]))
        return cls(shape, np.asarray(d["thetas"], dtype=float), tuple(d["initial"]))


@dataclass(frozen=True)
class PlanResult:
    assignments: tuple[Assignment, ...]
    total_cost: float
    solver_tag: str
    solve_time: float = 0.0


def plan_cost(assignments: Sequence[Sequence[int]], thetas, initial, shape_or_model) -> float:
    """Sum over the window of imbalance plus switching, starting from ``initial``."""
    model = shape_or_model if isinstance(shape_or_model, MakespanCost) else MakespanCost(shape_or_model)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(assignments) != len(thetas):
        raise ShapeError(f"{len(assignments)} assignments for {len(thetas)} traffic vectors")
    total, prev = 0.0, tuple(initial)
    for x, th in zip(assignments, thetas):
        total += model.objective(x, th) + model.switching(prev, x)
        prev = tuple(x)
    return total


def subproblem_objective(x, theta_terms, left, right, c: float, model: MakespanCost) -> float:
    val = sum(w * model.objective(x, th) for w, th in theta_terms)
    if c:
        val += c * model.switching(x, left)
        if right is not None:
            val += c * model.switching(x, right)
    return val


def _many_objective(X, thetas, weights, left, right, c, model):
    val = model.objective_many(X, thetas, weights)
    if c:
        val = val + c * model.switching_many(X, left)
        if right is not None:
            val = val + c * model.switching_many(X, right)
    return val


def _neighbors(left, right, c):
    return [(c, left)] + ([] if right is None else [(c, right)])


def _encodings(X: np.ndarray, m: int) -> np.ndarray:
    return X @ (m ** np.arange(X.shape[1] - 1, -1, -1))


def _best(vals: np.ndarray, X: np.ndarray, m: int) -> int:
    ties = np.flatnonzero(vals == vals.min())
    if len(ties) == 1:
        return int(ties[0])
    return int(ties[np.argmin(_encodings(X[ties], m))])


def _local_search(start, objective: Callable, k: int, m: int):
    """Best-improvement single-topic moves until no neighbour is strictly better."""
    x = np.array(start, dtype=np.intp)
    best = objective(x[None, :])[0]
    rows = np.repeat(np.arange(k), m - 1)
    shifts = np.tile(np.arange(1, m), k)
    while True:
        X = np.repeat(x[None, :], len(rows), axis=0)
        X[np.arange(len(rows)), rows] = (x[rows] + shifts) % m
        vals = objective(X)
        b = _best(vals, X, m)
        if not vals[b] < best:
            return tuple(int(v) for v in x), float(best)
        x, best = X[b], vals[b]


def solve_subproblem(theta_terms, left, right, c: float, model: MakespanCost | ProblemShape,
                     strategy: str = "enumerate", enumeration_limit: int = ENUMERATION_LIMIT,
                     restarts: int = 5, rng: np.random.Generator | None = None) -> Assignment:
    """Minimise ``sum_j w_j f(x, theta_j) + c d(x, left) + c d(x, right)``.

    ``theta_terms`` is a nonempty list of ``(weight, theta)`` pairs; ``right``
    may be ``None``.  ``strategy`` is ``"enumerate"`` (exact, needs
    ``m**k <= enumeration_limit``) or ``"local"`` (best-improvement moves from
    ``left`` plus ``restarts`` random starts).
    """
    if not isinstance(model, MakespanCost):
        model = MakespanCost(model)
    if c < 0:
        raise ParameterError("switching weight c must be >= 0")
    if not theta_terms:
        raise ParameterError("theta_terms must be nonempty")
    k, m = model.k, model.m
    weights = np.array([w for w, _ in theta_terms], dtype=float)
    thetas = np.array([np.asarray(th, dtype=float) for _, th in theta_terms]).reshape(len(theta_terms), k)
    left = np.asarray(left, dtype=np.intp)
    right = None if right is None else np.asarray(right, dtype=np.intp)

    if strategy == "enumerate":
        if m**k > enumeration_limit:
            raise CapacityError(f"m**k = {m**k} exceeds the enumeration limit {enumeration_limit}")
        vals = model.enumerate_objective(thetas, weights, _neighbors(left, right, c))
        return tuple(int(v) for v in digit_table(k, m)[int(np.argmin(vals))])
    if strategy == "local":
        rng = rng if rng is not None else np.random.default_rng(0)

        def objective(X):
            return _many_objective(X, thetas, weights, left, right, c, model)

        starts = [left] + [rng.integers(0, m, size=k) for _ in range(restarts)]
        found = [_local_search(s, objective, k, m) for s in starts]
        vals = np.array([v for _, v in found])
        X = np.array([x for x, _ in found], dtype=np.intp)
        return tuple(int(v) for v in X[_best(vals, X, m)])
    raise ParameterError(f"unknown subproblem strategy {strategy!r}")


def iterative_plan(problem: PlanningProblem, passes: int = 10, relax_c: float = 0.5,
                   strategy: str = "enumerate", rng: np.random.Generator | None = None,
                   enumeration_limit: int = ENUMERATION_LIMIT, restarts: int = 5,
                   early_stop: bool = True, on_update: Callable | None = None) -> PlanResult:
    """Coordinate descent over time steps.

    All steps start at the initial assignment.  Each pass sweeps ``t = 1..S``
    and re-solves step ``t`` with its neighbours fixed (no right neighbour at
    the last step), using switching weight ``relax_c`` on every pass but the
    last and ``1`` on the last.  A new solution replaces the old one only if
    it does not raise that pass's objective.  With ``early_stop``, a relaxed
    pass that changes nothing jumps straight to the final pass, which leaves
    the output unchanged because the remaining relaxed passes would repeat it.

    ``on_update(pass_index, t, assignments)`` is called after every accepted
    change.
    """
    if passes < 1:
        raise ParameterError("need at least one pass")
    started = time.perf_counter()
    model, S, x0 = problem.model, problem.S, problem.initial
    X = [x0] * S
    stalled = False
    for j in range(1, passes + 1):
        final = j == passes
        if early_stop and stalled and not final:
            continue
        c = 1.0 if final else relax_c
        changed = False
        for t in range(S):
            left = X[t - 1] if t > 0 else x0
            right = X[t + 1] if t < S - 1 else None
            terms = [(1.0, problem.thetas[t])]
            new = solve_subproblem(terms, left, right, c, model, strategy, enumeration_limit, restarts, rng)
            if new == X[t]:
                continue
            if subproblem_objective(new, terms, left, right, c, model) <= \
                    subproblem_objective(X[t], terms, left, right, c, model):
                X[t] = new
                changed = True
                if on_update is not None:
                    on_update(j, t, tuple(X))
        stalled = not changed
    X = tuple(X)
    return PlanResult(X, plan_cost(X, problem.thetas, x0, model), f"iterative-{strategy}",
                      time.perf_counter() - started)


def exact_plan_dp(problem: PlanningProblem, state_limit: int = DP_STATE_LIMIT) -> PlanResult:
    """Globally optimal window plan by dynamic programming over assignments."""
    started = time.perf_counter()
    model = problem.model
    k, m = model.k, model.m
    if m**k > state_limit:
        raise CapacityError(f"m**k = {m**k} exceeds the DP state limit {state_limit}")
    codes = digit_table(k, m)
    D = pairwise_switching(model)  # D[prev, next]
    f = np.column_stack([model.enumerate_objective(th[None, :]) for th in problem.thetas])
    V = f[:, 0] + D[encode(problem.initial, m)]
    back = []
    for t in range(1, problem.S):
        M = V[:, None] + D
        arg = np.argmin(M, axis=0)
        back.append(arg)
        V = M[arg, np.arange(len(V))] + f[:, t]
    path = [int(np.argmin(V))]
    for arg in reversed(back):
        path.append(int(arg[path[-1]]))
    path.reverse()
    X = tuple(tuple(int(v) for v in codes[p]) for p in path)
    return PlanResult(X, plan_cost(X, problem.thetas, problem.initial, model), "exact-dp",
                      time.perf_counter() - started)


def is_fixed_point(problem: PlanningProblem, assignments, enumeration_limit: int = ENUMERATION_LIMIT,
                   rtol: float = 1e-9):
    """Check that no single step can be strictly improved with its neighbours fixed.

    Returns ``(True, None)`` or ``(False, (t, x))`` with the first improving
    step (0-based) and the improving assignment.  Improvements smaller than
    ``rtol * (1 + |objective|)`` are treated as rounding noise.
    """
    model = problem.model
    k, m = model.k, model.m
    if m**k > enumeration_limit:
        raise CapacityError(f"m**k = {m**k} exceeds the enumeration limit {enumeration_limit}")
    codes = digit_table(k, m)
    X = [tuple(x) for x in assignments]
    if len(X) != problem.S:
        raise ShapeError("assignment sequence length differs from the problem horizon")
    for t in range(problem.S):
        left = np.asarray(X[t - 1] if t > 0 else problem.initial)
        right = np.asarray(X[t + 1]) if t < problem.S - 1 else None
        terms = [(1.0, problem.thetas[t])]
        current = subproblem_objective(X[t], terms, left, right, 1.0, model)
        vals = model.enumerate_objective(problem.thetas[t][None, :], None, _neighbors(left, right, 1.0))
        b = int(np.argmin(vals))
        if vals[b] < current - rtol * (1.0 + abs(current)):
            return False, (t, tuple(int(v) for v in codes[b]))
    return True, None


SolverFn = Callable[[PlanningProblem], PlanResult]


def make_solver(kind: str = "iterative", passes: int = 10, relax_c: float = 0.5,
                rng: np.random.Generator | None = None, enumeration_limit: int = ENUMERATION_LIMIT,
                state_limit: int = DP_STATE_LIMIT, restarts: int = 5, early_stop: bool = True) -> SolverFn:
    """Return ``problem -> PlanResult`` for ``kind`` in ``exact``, ``iterative``, ``iterative-local``, ``auto``.

    ``auto`` uses the DP when the state space fits ``state_limit`` and the
    enumeration-backed iterative planner otherwise.
    """
    if kind not in ("exact", "iterative", "iterative-local", "auto"):
        raise ParameterError(f"unknown solver kind {kind!r}")

    def solve(problem: PlanningProblem) -> PlanResult:
        chosen = kind
        if kind == "auto":
            chosen = "exact" if problem.model.m ** problem.model.k <= state_limit else "iterative"
        if chosen == "exact":
            return exact_plan_dp(problem, state_limit)
        strategy = "local" if chosen == "iterative-local" else "enumerate"
        return iterative_plan(problem, passes, relax_c, strategy, rng, enumeration_limit, restarts, early_stop)

    solve.kind = kind
    return solve
