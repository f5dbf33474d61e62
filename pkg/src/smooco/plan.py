"""Receding-horizon planning with predictions.

At each restart the planner asks the predictor for a forecast, picks the
largest window whose accumulated uncertainty ``2 L sum(eps)`` stays within the
maximal switching cost ``B``, solves the window offline on the predicted
traffic, and executes the whole plan before replanning.

:class:`OnlineStream` is the only way any online algorithm sees traffic: a
step's traffic is revealed only after the decision for that step has been
committed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Assignment, MakespanCost, ParameterError, as_series
from .predict import Forecast
from .solve import PlanningProblem, PlanResult, SolverFn


class LookaheadError(RuntimeError):
    """An algorithm tried to read traffic that has not been revealed yet."""


class OnlineStream:
    """Reveals a traffic series one step at a time.

    The first ``warmup`` rows are visible from the start and are not part of
    the online horizon.  Times are absolute and 1-based: the next decision is
    for time ``warmup + t`` where ``t`` is the 1-based online step.
    """

    def __init__(self, series, warmup: int = 0):
        data = as_series(series).copy()
        data.setflags(write=False)
        if warmup < 0 or warmup >= len(data):
            raise ParameterError("warmup must leave at least one online step")
        self.__data = data
        self.warmup = warmup
        self.horizon = len(data) - warmup
        self.k = data.shape[1]
        self._done = 0
        self.decisions: list[Assignment] = []

    @property
    def step(self) -> int:
        """1-based online index of the next decision."""
        return self._done + 1

    @property
    def time(self) -> int:
        """Absolute time of the next decision."""
        return self.warmup + self._done + 1

    @property
    def remaining(self) -> int:
        return self.horizon - self._done

    @property
    def done(self) -> bool:
        return self._done >= self.horizon

    def history(self) -> np.ndarray:
        """All revealed rows (absolute times ``1 .. time - 1``)."""
        return self.__data[: self.warmup + self._done].copy()

    def observe(self, time: int) -> np.ndarray:
        if time < 1 or time >= self.time:
            raise LookaheadError(f"traffic at time {time} is not revealed (next decision is for {self.time})")
        return self.__data[time - 1].copy()

    def commit(self, x) -> np.ndarray:
        """Execute decision ``x`` for the current step and return the revealed traffic."""
        if self.done:
            raise ParameterError("online horizon exhausted")
        self.decisions.append(tuple(int(v) for v in x))
        self._done += 1
        return self.__data[self.warmup + self._done - 1].copy()


@dataclass(frozen=True)
class WindowRecord:
    start_step: int
    size: int
    forecast: Forecast | None
    plan: PlanResult | None


@dataclass
class WindowTrace:
    restarts: list[WindowRecord] = field(default_factory=list)

    @property
    def I(self) -> int:  # noqa: E743 - the restart count
        return len(self.restarts)

    def sizes(self) -> list[int]:
        return [r.size for r in self.restarts]


@dataclass
class RunResult:
    """Decisions of one online algorithm with per-step window bookkeeping."""

    name: str
    decisions: list[Assignment]
    window_ids: list[int]
    window_sizes: list[int]
    trace: WindowTrace | None = None

    @property
    def solve_times(self) -> list[float]:
        if self.trace is None:
            return []
        return [r.plan.solve_time for r in self.trace.restarts if r.plan is not None]


def select_window(uncertainties, L: float, B: float, s_max: int) -> int:
    """Largest ``S <= s_max`` with ``2 L sum(eps[:S]) <= B``; at least 1."""
    eps = np.asarray(uncertainties, dtype=float)
    if eps.size == 0:
        raise ParameterError("uncertainty sequence is empty")
    if L <= 0 or B < 0 or s_max < 1:
        raise ParameterError("need L > 0, B >= 0 and s_max >= 1")
    cum = 2.0 * L * np.cumsum(eps[:s_max])
    return max(1, int(np.searchsorted(cum, B, side="right")))


Predictor = Callable[[np.ndarray, int, int], Forecast]


def _planning_loop(name, stream: OnlineStream, predictor: Predictor, solver: SolverFn,
                   model: MakespanCost, x0, choose_size) -> RunResult:
    prev = tuple(x0)
    trace = WindowTrace()
    ids, sizes = [], []
    while not stream.done:
        fc = predictor(stream.history(), stream.time, choose_size.horizon(stream.remaining))
        S = choose_size(fc, stream.remaining)
        problem = PlanningProblem(model.shape, fc.means[:S], prev, model)
        plan = solver(problem)
        trace.restarts.append(WindowRecord(stream.step, S, fc, plan))
        for x in plan.assignments:
            stream.commit(x)
            ids.append(trace.I)
            sizes.append(S)
        prev = plan.assignments[-1]
    return RunResult(name, list(stream.decisions), ids, sizes, trace)


class _Dynamic:
    def __init__(self, L, B, s_max):
        self.L, self.B, self.s_max = L, B, s_max

    def horizon(self, remaining):
        return min(self.s_max, remaining)

    def __call__(self, fc, remaining):
        return select_window(fc.uncertainties, self.L, self.B, min(self.s_max, remaining))


class _Fixed:
    def __init__(self, S):
        self.S = S

    def horizon(self, remaining):
        return min(self.S, remaining)

    def __call__(self, fc, remaining):
        return min(self.S, remaining)


def dynamic_planning_run(stream: OnlineStream, predictor: Predictor, solver: SolverFn,
                         model: MakespanCost, x0, s_max: int = 20, L: float | None = None,
                         B: float | None = None, name: str = "dynamic") -> RunResult:
    """Plan with windows sized by the predictive uncertainty.

    ``L`` and ``B`` default to the cost model's Lipschitz constant and maximal
    switching cost.
    """
    L = model.lipschitz if L is None else L
    B = model.max_switch if B is None else B
    return _planning_loop(name, stream, predictor, solver, model, x0, _Dynamic(L, B, s_max))


def fixed_window_run(S_fixed: int, stream: OnlineStream, predictor: Predictor, solver: SolverFn,
                     model: MakespanCost, x0, name: str | None = None) -> RunResult:
    """Plan disjoint windows of a fixed size (the last one clipped to the horizon)."""
    if S_fixed < 1:
        raise ParameterError("window size must be >= 1")
    return _planning_loop(name or f"fixed-{S_fixed}", stream, predictor, solver, model, x0, _Fixed(S_fixed))
