"""Regret bound calculators and empirical checks of the analytical claims.

The harnesses here produce :class:`BoundCheck` rows:

* ``thm1`` -- a single window planned on bounded-error predictions loses at
  most ``2 L sum(eps)`` against the window's true optimum;
* ``thm2`` -- a full run with uncertainty-sized windows loses at most ``2 B I``
  against the full-horizon optimum;
* ``fixed-point`` -- every globally optimal plan is a fixed point of the
  single-step update with ``c = 1``;
* ``rates`` -- growth exponent of the restart count ``I`` for the schedule
  ``eps = scale * s**a / t**b``;
* ``lower-bound`` -- on a one-dimensional coin-flip instance every online
  algorithm pays ``L sum(t**-b)`` regret in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import ftl_run, ftp_run, ogd_run, static_run
from .core import MakespanCost, ParameterError, ProblemShape, digit_table
from .plan import OnlineStream, dynamic_planning_run, fixed_window_run, select_window
from .predict import Forecast, OraclePredictor, oracle_forecast
from .solve import PlanningProblem, exact_plan_dp, is_fixed_point, make_solver, plan_cost
from .traffic import TrafficGenConfig, generate_traffic, substream

SUITES = ("thm1", "thm2", "fixed-point", "rates", "lower-bound")
REPORT_COLUMNS = ("check", "instances", "violations", "max_slack", "slope", "slope_target")


@dataclass(frozen=True)
class UncertaintySchedule:
    """``eps(t, s) = scale * s**a / t**b`` for a forecast made at ``t``, offset ``s >= 1``."""

    a: float = 0.0
    b: float = 0.5
    scale: float = 1.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ParameterError("schedule exponents must be >= 0")
        if self.scale <= 0:
            raise ParameterError("schedule scale must be > 0")

    def __call__(self, t: int, s: int) -> float:
        return self.scale * s**self.a / t**self.b

    def window(self, t: int, n: int) -> np.ndarray:
        s = np.arange(1, n + 1, dtype=float)
        return self.scale * s**self.a / float(t) ** self.b


def window_regret_bound(L: float, eps) -> float:
    if L <= 0:
        raise ParameterError("L must be > 0")
    return 2.0 * L * float(np.sum(eps))


def total_regret_bound(B: float, I: int) -> float:
    if B < 0 or I < 0:
        raise ParameterError("need B >= 0 and I >= 0")
    return 2.0 * B * I


def simulate_window_recursion(schedule: UncertaintySchedule, L: float, B: float, T: int):
    """Tile ``[1, T]`` with the windows the selection rule picks under ``schedule``.

    There is no ``s_max`` cap; the candidate horizon doubles until the rule
    stops short of it or it covers the rest of ``[1, T]``.

    Returns
    -------
    I : int
        Number of windows.
    starts : list of int
        Window start times ``T_1 = 1, T_2, ...``.
    """
    if T < 1:
        raise ParameterError("T must be >= 1")
    starts = []
    t = 1
    while t <= T:
        starts.append(t)
        remaining = T - t + 1
        n = min(64, remaining)
        while True:
            S = select_window(schedule.window(t, n), L, B, n)
            if S < n or n == remaining:
                break
            n = min(2 * n, remaining)
        t += S
    return len(starts), starts


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def rate_exponent(a: float, b: float) -> float:
    """Growth exponent of ``I`` in ``T``: ``1 - b/(a+1)`` below the critical line, else 0."""
    return 1.0 - b / (a + 1.0) if b < a + 1.0 else 0.0


class AbsoluteCost(MakespanCost):
    """One-dimensional cost ``L |x - theta|`` over decisions ``{0, 1}`` with no switching cost."""

    def __init__(self, L: float = 1.0):
        if L <= 0:
            raise ParameterError("L must be > 0")
        super().__init__(ProblemShape(1, 2, (0.0, 0.0)))
        self.L = float(L)

    @property
    def lipschitz(self) -> float:
        return self.L

    def objective(self, x, theta) -> float:
        return self.L * abs(float(x[0]) - float(np.asarray(theta).ravel()[0]))

    def objective_many(self, X, thetas, weights=None) -> np.ndarray:
        th = np.atleast_2d(np.asarray(thetas, dtype=float))[:, 0]
        w = np.ones(len(th)) if weights is None else np.asarray(weights, dtype=float)
        x = np.asarray(X, dtype=float)[:, 0]
        return self.L * np.abs(x[:, None] - th[None, :]) @ w

    def enumerate_objective(self, thetas, weights=None, neighbors=()) -> np.ndarray:
        X = digit_table(1, 2)
        vals = self.objective_many(X, thetas, weights)
        for c, y in neighbors:
            if c:
                vals = vals + c * self.switching_many(X, y)
        return vals

    def relaxed_objective(self, R, theta) -> float:
        return self.L * abs(float(R[0, 1]) - float(np.asarray(theta).ravel()[0]))

    def relaxed_subgradient(self, R, theta) -> np.ndarray:
        g = np.zeros_like(np.asarray(R, dtype=float))
        g[0, 1] = self.L * np.sign(float(R[0, 1]) - float(np.asarray(theta).ravel()[0]))
        return g


@dataclass
class LowerBoundInstance:
    """Coin-flip traffic ``1/2 +- delta_t`` with a constant prediction ``1/2``.

    ``delta_t = min(t**-b, 1/2)``: early steps where ``t**-b >= 1/2`` use the
    boundary value, which keeps traffic inside ``[0, 1]``.
    """

    b: float
    L: float
    T: int
    model: AbsoluteCost
    signs: np.ndarray

    @property
    def deltas(self) -> np.ndarray:
        t = np.arange(1, self.T + 1, dtype=float)
        return np.minimum(t ** -self.b, 0.5)

    @property
    def traffic(self) -> np.ndarray:
        return (0.5 + self.signs * self.deltas)[:, None]

    def uncertainty(self, t: int) -> float:
        return float(t) ** -self.b

    def predictor(self, history, t: int, H: int) -> Forecast:
        return Forecast(t, np.full((H, 1), 0.5), np.full(H, self.uncertainty(t)))

    def clairvoyant_decisions(self) -> list[tuple[int]]:
        return [(1,) if s > 0 else (0,) for s in self.signs]

    def clairvoyant_cost(self) -> float:
        return float(self.L * np.sum(0.5 - self.deltas))

    def expected_regret(self) -> float:
        return float(self.L * np.sum(self.deltas))


def lower_bound_instance(b: float, L: float, T: int, rng) -> LowerBoundInstance:
    if b < 0 or T < 1:
        raise ParameterError("need b >= 0 and T >= 1")
    signs = np.where(rng.random(T) < 0.5, -1.0, 1.0)
    return LowerBoundInstance(b, L, T, AbsoluteCost(L), signs)


LOWER_BOUND_ALGORITHMS = ("static", "ogd", "ftl", "ftp", "short-term", "long-term", "dynamic")


def run_on_lower_bound(name: str, inst: LowerBoundInstance, rng=None) -> list:
    """Decisions of a named online algorithm on the instance (``x0 = (0,)``)."""
    stream = OnlineStream(inst.traffic, 0)
    model, x0 = inst.model, (0,)
    if name == "static":
        return static_run(stream, model, x0).decisions
    if name == "ogd":
        return ogd_run(stream, model, x0).decisions
    if name == "ftl":
        return ftl_run(stream, model, x0, "enumerate", rng=rng).decisions
    if name == "ftp":
        return ftp_run(stream, model, x0, "enumerate", rng=rng).decisions
    solver = make_solver("exact")
    if name == "short-term":
        return fixed_window_run(1, stream, inst.predictor, solver, model, x0).decisions
    if name == "long-term":
        return fixed_window_run(10, stream, inst.predictor, solver, model, x0).decisions
    if name == "dynamic":
        return dynamic_planning_run(stream, inst.predictor, solver, model, x0).decisions
    raise ParameterError(f"unknown algorithm {name!r}")


def realized_regret(decisions, inst: LowerBoundInstance) -> float:
    traffic = inst.traffic
    cost = sum(inst.model.objective(x, th) for x, th in zip(decisions, traffic))
    return cost - inst.clairvoyant_cost()


@dataclass(frozen=True)
class BoundCheck:
    """One report row.  ``max_slack`` is the largest ``measured - bound`` (<= 0 when the bound holds)."""

    check: str
    instances: int
    violations: int
    max_slack: float
    slope: float = float("nan")
    slope_target: float = float("nan")

    def as_row(self) -> tuple:
        return (self.check, self.instances, self.violations, self.max_slack, self.slope, self.slope_target)


def _random_shape(rng, k: int, m: int) -> ProblemShape:
    return ProblemShape(k, m, tuple(float(v) for v in rng.uniform(0.0, 2.0, size=m)))


@dataclass
class WindowCheck:
    regret: float
    bound: float


def window_bound_instance(rng, k: int = 4, m: int = 2, S: int = 3, traffic_high: float = 5.0,
                      eps_high: float = 2.0) -> WindowCheck:
    """Plan one window on oracle predictions and on the truth from a shared start; compare."""
    shape = _random_shape(rng, k, m)
    model = MakespanCost(shape)
    truth = rng.uniform(0.0, traffic_high, size=(S, k))
    eps = rng.uniform(0.0, eps_high, size=S)
    fc = oracle_forecast(truth, 1, S, lambda t, s: eps[s - 1], rng)
    x0 = tuple(int(v) for v in rng.integers(0, m, size=k))
    predicted = exact_plan_dp(PlanningProblem(shape, fc.means, x0, model))
    best = exact_plan_dp(PlanningProblem(shape, truth, x0, model))
    regret = plan_cost(predicted.assignments, truth, x0, model) - best.total_cost
    return WindowCheck(regret, window_regret_bound(model.lipschitz, fc.uncertainties))


def check_window_bound(instances: int = 50, seed: int = 0, **kw) -> BoundCheck:
    rng = np.random.default_rng(seed)
    gaps = [c.regret - c.bound for c in (window_bound_instance(rng, **kw) for _ in range(instances))]
    return BoundCheck("thm1", instances, int(sum(g > 0 for g in gaps)), float(max(gaps)))


@dataclass
class RunCheck:
    regret: float
    bound: float
    I: int


def horizon_bound_run(seed: int, k: int = 4, m: int = 2, T: int = 40,
                 schedule: UncertaintySchedule = UncertaintySchedule(0.0, 0.7, 0.5), s_max: int = 20) -> RunCheck:
    """Full run with oracle predictions and exact windows against the exact full-horizon optimum."""
    rng = substream(seed, "thm2")
    shape = _random_shape(rng, k, m)
    model = MakespanCost(shape)
    traffic = generate_traffic(TrafficGenConfig(seed=seed, k=k, horizon=T))
    x0 = tuple(i % m for i in range(k))
    predictor = OraclePredictor(traffic, schedule, substream(seed, "oracle"))
    run = dynamic_planning_run(OnlineStream(traffic, 0), predictor, make_solver("exact"), model, x0, s_max)
    best = exact_plan_dp(PlanningProblem(shape, traffic, x0, model))
    regret = plan_cost(run.decisions, traffic, x0, model) - best.total_cost
    return RunCheck(regret, total_regret_bound(model.max_switch, run.trace.I), run.trace.I)


def check_horizon_bound(runs: int = 20, seed: int = 0, **kw) -> BoundCheck:
    gaps = [c.regret - c.bound for c in (horizon_bound_run(seed * 1_000_003 + r, **kw) for r in range(runs))]
    return BoundCheck("thm2", runs, int(sum(g > 0 for g in gaps)), float(max(gaps)))


def check_fixed_point(instances: int = 30, seed: int = 0, max_k: int = 5, m: int = 2, max_S: int = 4) -> BoundCheck:
    """``max_slack`` is the largest single-step improvement found (0 when every plan is a fixed point)."""
    rng = np.random.default_rng(seed)
    bad, worst = 0, 0.0
    for _ in range(instances):
        k = int(rng.integers(1, max_k + 1))
        S = int(rng.integers(1, max_S + 1))
        shape = _random_shape(rng, k, m)
        problem = PlanningProblem(shape, rng.uniform(0.0, 5.0, size=(S, k)),
                                  tuple(int(v) for v in rng.integers(0, m, size=k)))
        plan = exact_plan_dp(problem).assignments
        ok, found = is_fixed_point(problem, plan)
        if not ok:
            bad += 1
            t, x = found
            better = plan[:t] + (x,) + plan[t + 1:]
            worst = max(worst, plan_cost(plan, problem.thetas, problem.initial, problem.model)
                        - plan_cost(better, problem.thetas, problem.initial, problem.model))
    return BoundCheck("fixed-point", instances, bad, worst)


@dataclass
class RateCheck:
    horizons: list[int]
    counts: list[int]
    slope: float
    target: float
    ok: bool


def measure_rate(a: float, b: float, horizons=(1_000, 10_000, 100_000), L: float = 1.0, B: float = 1.0,
                 scale: float = 1.0, tolerance: float = 0.15, log_ratio_limit: float = 3.0) -> RateCheck:
    """Fit the log-log slope of ``I`` against ``T``.

    Below the critical line ``b = a + 1`` the slope must lie within
    ``tolerance`` of ``1 - b/(a+1)``; on or above it (logarithmic or slower
    growth) ``I(T_max) / I(T_min)`` must stay under ``log_ratio_limit``.
    """
    schedule = UncertaintySchedule(a, b, scale)
    counts = [simulate_window_recursion(schedule, L, B, T)[0] for T in horizons]
    slope = loglog_slope(horizons, counts)
    target = rate_exponent(a, b)
    if b < a + 1:
        ok = abs(slope - target) <= tolerance
    else:
        ok = counts[-1] / counts[0] < log_ratio_limit
    return RateCheck(list(horizons), counts, slope, target, ok)


def check_rates(a: float = 0.0, b: float = 0.5, **kw) -> BoundCheck:
    r = measure_rate(a, b, **kw)
    return BoundCheck(f"rates(a={a:g},b={b:g})", len(r.horizons), int(not r.ok),
                      float(abs(r.slope - r.target)), r.slope, r.target)


def lower_bound_trials(name: str, seeds: int = 50, b: float = 0.5, L: float = 1.0, T: int = 1000,
                       seed: int = 0) -> np.ndarray:
    out = []
    for s in range(seeds):
        inst = lower_bound_instance(b, L, T, substream(seed, "lower-bound", s))
        out.append(realized_regret(run_on_lower_bound(name, inst, substream(seed, "lb-alg", name, s)), inst))
    return np.array(out)


def check_lower_bound(seeds: int = 50, b: float = 0.5, L: float = 1.0, T: int = 1000, seed: int = 0,
                      algorithms=LOWER_BOUND_ALGORITHMS, band=(0.7, 1.3)) -> list[BoundCheck]:
    """Mean regret of each algorithm relative to ``L sum_t t**-b``.

    The ``slope`` column carries the ratio (target 1) and a violation is a
    ratio outside ``band``.
    """
    target = L * float(np.sum(np.arange(1, T + 1, dtype=float) ** -b))
    rows = []
    for name in algorithms:
        ratio = float(np.mean(lower_bound_trials(name, seeds, b, L, T, seed))) / target
        outside = max(band[0] - ratio, ratio - band[1])
        rows.append(BoundCheck(f"lower-bound:{name}", seeds, int(outside > 0), outside, ratio, 1.0))
    return rows


def run_suite(name: str, seed: int = 0, a: float | None = None, b: float | None = None) -> list[BoundCheck]:
    if name == "thm1":
        return [check_window_bound(seed=seed)]
    if name == "thm2":
        return [check_horizon_bound(seed=seed)]
    if name == "fixed-point":
        return [check_fixed_point(seed=seed)]
    if name == "rates":
        if a is None and b is None:
            return [check_rates(0.0, 0.5), check_rates(0.0, 1.0)]
        return [check_rates(0.0 if a is None else a, 0.5 if b is None else b)]
    if name == "lower-bound":
        return check_lower_bound(seed=seed, b=0.5 if b is None else b)
    raise ParameterError(f"unknown suite {name!r}; valid: {', '.join(SUITES)}")

