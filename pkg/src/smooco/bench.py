"""Experiment harness: offline benchmark, regret ledgers, trials and sweeps.

A trial draws traffic (warmup plus online segment), per-server unit costs and
a round-robin initial assignment from its own seed, builds the chunked
offline benchmark over the online segment and runs every configured
algorithm on the same traffic.  Trials are independent, so they can run in
worker processes; results are merged in trial order, which makes the output
files independent of the worker count.
"""

from __future__ import annotations

import csv
import io
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import ftl_run, ftp_run, ogd_run, static_run
from .core import MakespanCost, ParameterError, ProblemShape, ShapeError, as_series
from .plan import OnlineStream, RunResult, dynamic_planning_run, fixed_window_run
from .predict import GPPredictor, RationalQuadraticKernel
from .solve import (
    DP_STATE_LIMIT,
    ENUMERATION_LIMIT,
    PlanningProblem,
    PlanResult,
    make_solver,
    plan_cost,
)
from .traffic import TrafficGenConfig, generate_traffic, substream

STEP_COLUMNS = ("trial", "algorithm", "t", "imbalance", "switching", "bench_imbalance", "bench_switching",
                "cum_regret", "cum_imb_regret", "cum_sw_regret", "window_id", "window_size")
SUMMARY_COLUMNS = ("algorithm", "metric", "mean", "std", "trials")
SWEEP_COLUMNS = ("solver", "size", "mean_regret", "std_regret", "mean_solve_time", "trials")
ALGORITHM_KINDS = ("static", "ogd", "ftl", "ftp", "fixed", "dynamic")


@dataclass(frozen=True)
class AlgorithmSpec:
    """A named online algorithm; ``window`` is used by ``fixed`` only."""

    name: str
    kind: str
    window: int | None = None

    def __post_init__(self):
        if self.kind not in ALGORITHM_KINDS:
            raise ParameterError(f"unknown algorithm kind {self.kind!r}; expected one of {ALGORITHM_KINDS}")
        if self.kind == "fixed" and (self.window is None or self.window < 1):
            raise ParameterError(f"algorithm {self.name!r}: fixed windows need window >= 1")


DEFAULT_ALGORITHMS = (
    AlgorithmSpec("static", "static"),
    AlgorithmSpec("ogd", "ogd"),
    AlgorithmSpec("ftl", "ftl"),
    AlgorithmSpec("ftp", "ftp"),
    AlgorithmSpec("short-term", "fixed", 1),
    AlgorithmSpec("long-term", "fixed", 10),
    AlgorithmSpec("dynamic", "dynamic"),
)


def algorithm_by_name(name: str) -> AlgorithmSpec:
    for spec in DEFAULT_ALGORITHMS:
        if spec.name == name:
            return spec
    if name.startswith("fixed-") and name[6:].isdigit():
        return AlgorithmSpec(name, "fixed", int(name[6:]))
    known = ", ".join(s.name for s in DEFAULT_ALGORITHMS)
    raise ParameterError(f"unknown algorithm {name!r}; known: {known}, fixed-<S>")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; defaults reproduce the full-scale experiment.

    ``traffic.seed`` and ``traffic.horizon`` are overridden per trial.  When
    ``unit_costs`` is ``None`` every trial draws ``u ~ U[unit_cost_low,
    unit_cost_high]`` per server.
    """

    traffic: TrafficGenConfig = field(default_factory=TrafficGenConfig)
    m: int = 3
    unit_costs: tuple[float, ...] | None = None
    unit_cost_low: float = 0.0
    unit_cost_high: float = 2.0
    warmup: int = 50
    online_steps: int = 100
    trials: int = 10
    seed: int = 0
    algorithms: tuple[AlgorithmSpec, ...] = DEFAULT_ALGORITHMS
    benchmark_chunk: int = 5
    solver: str = "auto"
    passes: int = 10
    relax_c: float = 0.5
    enumeration_limit: int = ENUMERATION_LIMIT
    dp_state_limit: int = DP_STATE_LIMIT
    restarts: int = 5
    ftl_strategy: str = "local"
    ftp_strategy: str = "enumerate"
    use_warmup_history: bool = True
    s_max: int = 20
    kernel: RationalQuadraticKernel = field(default_factory=RationalQuadraticKernel)
    z: float = 1.0
    scale_variance: bool = True
    ogd_eta0: float | None = None

    def __post_init__(self):
        if self.warmup < 2:
            raise ParameterError("warmup must be >= 2 (the forecaster needs two points)")
        if self.trials < 1 or self.online_steps < 1:
            raise ParameterError("trials and online_steps must be >= 1")
        if self.benchmark_chunk < 1:
            raise ParameterError("benchmark_chunk must be >= 1")
        if self.m < 1:
            raise ParameterError("m must be >= 1")
        if self.unit_costs is not None and len(self.unit_costs) != self.m:
            raise ShapeError(f"unit_costs has {len(self.unit_costs)} entries, expected m={self.m}")
        if not self.algorithms:
            raise ParameterError("at least one algorithm is required")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ParameterError("algorithm names must be unique")

    @property
    def k(self) -> int:
        return self.traffic.k


@dataclass
class RegretLedger:
    """Per-step costs of an algorithm and the benchmark with cumulative regret."""

    imbalance: np.ndarray
    switching: np.ndarray
    bench_imbalance: np.ndarray
    bench_switching: np.ndarray
    cum_regret: np.ndarray
    cum_imb_regret: np.ndarray
    cum_sw_regret: np.ndarray

    def __len__(self) -> int:
        return len(self.imbalance)

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1]) if len(self) else 0.0


def _step_costs(decisions, traffic, x0, model: MakespanCost):
    imb = np.array([model.objective(x, th) for x, th in zip(decisions, traffic)])
    prev = [tuple(x0)] + [tuple(x) for x in decisions[:-1]]
    sw = np.array([model.switching(p, x) for p, x in zip(prev, decisions)])
    return imb, sw


def cumulative_regret(alg_decisions, benchmark_decisions, traffic, x0, shape_or_model) -> RegretLedger:
    """Step costs of both sequences and the running regret with its decomposition."""
    model = shape_or_model if isinstance(shape_or_model, MakespanCost) else MakespanCost(shape_or_model)
    traffic = as_series(traffic, model.k)
    if not (len(alg_decisions) == len(benchmark_decisions) == len(traffic)):
        raise ShapeError("decision sequences and traffic must have equal lengths")
    imb, sw = _step_costs(alg_decisions, traffic, x0, model)
    bimb, bsw = _step_costs(benchmark_decisions, traffic, x0, model)
    return RegretLedger(imb, sw, bimb, bsw,
                        np.cumsum((imb + sw) - (bimb + bsw)),
                        np.cumsum(imb - bimb),
                        np.cumsum(sw - bsw))


def offline_benchmark(traffic, x0, shape_or_model, chunk: int = 5, solver=None,
                      dp_state_limit: int = DP_STATE_LIMIT, **solver_kw) -> PlanResult:
    """Solve consecutive chunks with true traffic, chaining each chunk's last assignment.

    The default solver is exact DP when ``m**k <= dp_state_limit`` and the
    enumeration-backed iterative planner otherwise.
    """
    if chunk < 1:
        raise ParameterError("chunk must be >= 1")
    model = shape_or_model if isinstance(shape_or_model, MakespanCost) else MakespanCost(shape_or_model)
    traffic = as_series(traffic, model.k)
    solver = solver or make_solver("auto", state_limit=dp_state_limit, **solver_kw)
    prev = tuple(x0)
    out = []
    seconds = 0.0
    for start in range(0, len(traffic), chunk):
        res = solver(PlanningProblem(model.shape, traffic[start:start + chunk], prev, model))
        out.extend(res.assignments)
        seconds += res.solve_time
        prev = res.assignments[-1]
    out = tuple(out)
    return PlanResult(out, plan_cost(out, traffic, x0, model), f"chunked-{chunk}", seconds)


def round_robin(k: int, m: int) -> tuple[int, ...]:
    return tuple(i % m for i in range(k))


@dataclass
class TrialSetup:
    trial: int
    traffic: np.ndarray
    model: MakespanCost
    x0: tuple[int, ...]
    seed: int


def trial_seed(master: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(master), int(trial)]).generate_state(1, np.uint64)[0])


def setup_trial(config: ExperimentConfig, trial: int) -> TrialSetup:
    seed = trial_seed(config.seed, trial)
    tcfg = replace(config.traffic, seed=seed, horizon=config.warmup + config.online_steps)
    traffic = generate_traffic(tcfg)
    if config.unit_costs is None:
        u = substream(seed, "unit_costs").uniform(config.unit_cost_low, config.unit_cost_high, size=config.m)
    else:
        u = np.asarray(config.unit_costs, dtype=float)
    shape = ProblemShape(config.k, config.m, tuple(float(v) for v in u))
    return TrialSetup(trial, traffic, MakespanCost(shape), round_robin(config.k, config.m), seed)


def _solver(config: ExperimentConfig, rng, kind: str | None = None):
    return make_solver(kind or config.solver, config.passes, config.relax_c, rng, config.enumeration_limit,
                       config.dp_state_limit, config.restarts)


def run_algorithm(spec: AlgorithmSpec, config: ExperimentConfig, setup: TrialSetup, predictor=None,
                  solver=None) -> RunResult:
    """Run one algorithm over the online segment of a trial."""
    stream = OnlineStream(setup.traffic, config.warmup)
    rng = substream(setup.seed, "algorithm", spec.name)
    model, x0 = setup.model, setup.x0
    if spec.kind == "static":
        res = static_run(stream, model, x0, spec.name)
    elif spec.kind == "ogd":
        res = ogd_run(stream, model, x0, config.ogd_eta0, spec.name)
    elif spec.kind == "ftl":
        res = ftl_run(stream, model, x0, config.ftl_strategy, config.use_warmup_history, config.restarts, rng,
                      config.enumeration_limit, spec.name)
    elif spec.kind == "ftp":
        res = ftp_run(stream, model, x0, config.ftp_strategy, config.use_warmup_history, config.restarts, rng,
                      config.enumeration_limit, spec.name)
    else:
        predictor = predictor or GPPredictor(config.kernel, config.z, config.scale_variance)
        solver = solver or _solver(config, rng)
        if spec.kind == "fixed":
            res = fixed_window_run(spec.window, stream, predictor, solver, model, x0, spec.name)
        else:
            res = dynamic_planning_run(stream, predictor, solver, model, x0, config.s_max, name=spec.name)
    return res


@dataclass
class AlgorithmOutcome:
    name: str
    ledger: RegretLedger | None
    run: RunResult | None
    error: str | None = None


@dataclass
class TrialResult:
    trial: int
    benchmark: PlanResult | None
    outcomes: list[AlgorithmOutcome]
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None or any(o.error is not None for o in self.outcomes)


def _describe(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    try:
        setup = setup_trial(config, trial)
        online = setup.traffic[config.warmup:]
        bench = offline_benchmark(online, setup.x0, setup.model, config.benchmark_chunk,
                                  _solver(config, substream(setup.seed, "benchmark"), "auto"))
    except Exception as exc:  # recorded as a failure row
        return TrialResult(trial, None, [], _describe(exc) + "\n" + traceback.format_exc(limit=3))
    outcomes = []
    for spec in config.algorithms:
        try:
            res = run_algorithm(spec, config, setup)
            ledger = cumulative_regret(res.decisions, bench.assignments, online, setup.x0, setup.model)
            outcomes.append(AlgorithmOutcome(spec.name, ledger, res))
        except Exception as exc:
            outcomes.append(AlgorithmOutcome(spec.name, None, None, _describe(exc)))
    return TrialResult(trial, bench, outcomes)


def _run_trial_star(args):
    return run_trial(*args)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SMOOCO_WORKERS", "1")))
    except ValueError:
        return 1


def map_trials(fn, config, items, workers: int | None = None) -> list:
    """Apply ``fn(config, item)`` to every item, in processes when ``workers > 1``; order is preserved."""
    workers = default_workers() if workers is None else workers
    args = [(config, it) for it in items]
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
        return list(pool.map(_star, [(fn, a) for a in args]))


def _star(packed):
    fn, args = packed
    return fn(*args)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialResult]

    @property
    def failed(self) -> bool:
        return any(t.failed for t in self.trials)

    def algorithm_names(self) -> list[str]:
        return [a.name for a in self.config.algorithms]

    def ledgers(self, name: str) -> list[RegretLedger]:
        return [o.ledger for t in self.trials for o in t.outcomes if o.name == name and o.ledger is not None]

    def final_regrets(self, name: str) -> np.ndarray:
        return np.array([lg.final_regret for lg in self.ledgers(name)])

    def mean_final_regret(self, name: str) -> float:
        return float(np.mean(self.final_regrets(name)))


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    return ExperimentResult(config, map_trials(run_trial, config, range(config.trials), workers))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def step_rows(result: ExperimentResult):
    for tr in result.trials:
        for o in tr.outcomes:
            if o.ledger is None:
                continue
            lg, run = o.ledger, o.run
            for t in range(len(lg)):
                yield (tr.trial, o.name, t + 1, lg.imbalance[t], lg.switching[t], lg.bench_imbalance[t],
                       lg.bench_switching[t], lg.cum_regret[t], lg.cum_imb_regret[t], lg.cum_sw_regret[t],
                       run.window_ids[t], run.window_sizes[t])


def _mean_std(vals) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=float)
    if vals.size == 0:
        return float("nan"), float("nan")
    return float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0


def summary_rows(result: ExperimentResult):
    """Mean and sample standard deviation across trials of per-trial summaries."""
    for name in result.algorithm_names():
        outs = [o for t in result.trials for o in t.outcomes if o.name == name and o.ledger is not None]
        metrics = {
            "final_regret": [o.ledger.final_regret for o in outs],
            "final_imbalance_regret": [o.ledger.cum_imb_regret[-1] for o in outs],
            "final_switching_regret": [o.ledger.cum_sw_regret[-1] for o in outs],
            "total_cost": [float(np.sum(o.ledger.imbalance + o.ledger.switching)) for o in outs],
            "benchmark_cost": [float(np.sum(o.ledger.bench_imbalance + o.ledger.bench_switching)) for o in outs],
            "benchmark_chunk": [result.config.benchmark_chunk for _ in outs],
        }
        windowed = [o for o in outs if o.run.trace is not None]
        if windowed:
            metrics["restarts"] = [o.run.trace.I for o in windowed]
            metrics["mean_window_size"] = [float(np.mean(o.run.trace.sizes())) for o in windowed]
        for metric, vals in metrics.items():
            mean, std = _mean_std(vals)
            yield name, metric, mean, std, len(vals)


def failure_rows(result: ExperimentResult):
    for tr in result.trials:
        if tr.error is not None:
            yield tr.trial, "*", tr.error.splitlines()[0]
        for o in tr.outcomes:
            if o.error is not None:
                yield tr.trial, o.name, o.error


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_results(result: ExperimentResult, out_dir) -> list[Path]:
    """Write ``steps.csv``, ``summary.csv`` and (if anything failed) ``failures.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "steps.csv", out / "summary.csv"]
    _write_csv(paths[0], STEP_COLUMNS, step_rows(result))
    _write_csv(paths[1], SUMMARY_COLUMNS, summary_rows(result))
    fails = list(failure_rows(result))
    if fails:
        paths.append(out / "failures.csv")
        _write_csv(paths[-1], ("trial", "algorithm", "error"), fails)
    return paths


def _sweep_trial(config: ExperimentConfig, trial: int, sizes, solvers):
    setup = setup_trial(config, trial)
    online = setup.traffic[config.warmup:]
    bench = offline_benchmark(online, setup.x0, setup.model, config.benchmark_chunk,
                              _solver(config, substream(setup.seed, "benchmark"), "auto"))
    predictor = GPPredictor(config.kernel, config.z, config.scale_variance)
    rows = []
    for kind in solvers:
        for S in sizes:
            spec = AlgorithmSpec(f"fixed-{S}", "fixed", S)
            solver = _solver(config, substream(setup.seed, "sweep", kind, S), kind)
            res = run_algorithm(spec, config, setup, predictor, solver)
            ledger = cumulative_regret(res.decisions, bench.assignments, online, setup.x0, setup.model)
            rows.append((kind, S, ledger.final_regret, float(np.mean(res.solve_times))))
    return rows


def _sweep_star(config, packed):
    trial, sizes, solvers = packed
    return _sweep_trial(config, trial, sizes, solvers)


@dataclass
class SweepResult:
    rows: list[tuple]  # (solver, size, mean_regret, std_regret, mean_solve_time, trials)

    def curve(self, solver: str) -> tuple[list[int], list[float]]:
        pts = [(r[1], r[2]) for r in self.rows if r[0] == solver]
        return [p[0] for p in pts], [p[1] for p in pts]

    def times(self, solver: str) -> tuple[list[int], list[float]]:
        pts = [(r[1], r[4]) for r in self.rows if r[0] == solver]
        return [p[0] for p in pts], [p[1] for p in pts]


def sweep_windows(config: ExperimentConfig, sizes, solvers=("iterative",), workers: int | None = None) -> SweepResult:
    """Fixed-window runs for every size and solver kind, aggregated across trials."""
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ParameterError("sizes must be nonempty")
    if len(set(sizes)) != len(sizes) or min(sizes) < 1:
        raise ParameterError("sizes must be distinct positive integers")
    per_trial = map_trials(_sweep_star, config, [(t, sizes, tuple(solvers)) for t in range(config.trials)], workers)
    rows = []
    for kind in solvers:
        for S in sizes:
            regrets = [r[2] for tr in per_trial for r in tr if r[0] == kind and r[1] == S]
            times = [r[3] for tr in per_trial for r in tr if r[0] == kind and r[1] == S]
            mean, std = _mean_std(regrets)
            rows.append((kind, S, mean, std, float(np.mean(times)), len(regrets)))
    return SweepResult(rows)


def write_sweep(result: SweepResult, path) -> Path:
    _write_csv(path, SWEEP_COLUMNS, result.rows)
    return Path(path)


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "smooco"
    return plt


def _save(fig, path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    _pyplot().close(fig)
    return Path(path)


def _aggregate_steps(rows: list[dict], column: str) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """``algorithm -> (t, mean, std)`` of ``column`` across trials, in first-seen algorithm order."""
    by_alg: dict[str, dict[int, list[float]]] = {}
    for r in rows:
        by_alg.setdefault(r["algorithm"], {}).setdefault(int(r["t"]), []).append(float(r[column]))
    out = {}
    for name, series in by_alg.items():
        ts = np.array(sorted(series))
        vals = [np.asarray(series[t]) for t in ts]
        mean = np.array([v.mean() for v in vals])
        std = np.array([v.std(ddof=1) if v.size > 1 else 0.0 for v in vals])
        out[name] = (ts, mean, std)
    return out


def _band_plot(ax, agg, ylabel):
    for name, (ts, mean, std) in agg.items():
        line, = ax.plot(ts, mean, label=name)
        ax.fill_between(ts, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel("online step")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)


def plot_regret(steps_csv, out_path) -> Path:
    """Mean cumulative regret per algorithm with a one-standard-deviation band."""
    plt = _pyplot()
    rows = read_csv_rows(steps_csv)
    fig, ax = plt.subplots(figsize=(6, 4))
    _band_plot(ax, _aggregate_steps(rows, "cum_regret"), "cumulative regret")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_decomposition(steps_csv, out_path) -> Path:
    """Cumulative imbalance regret and cumulative switching regret side by side."""
    plt = _pyplot()
    rows = read_csv_rows(steps_csv)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    _band_plot(axes[0], _aggregate_steps(rows, "cum_imb_regret"), "cumulative imbalance regret")
    _band_plot(axes[1], _aggregate_steps(rows, "cum_sw_regret"), "cumulative switching regret")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_sweep(sweep_csv, out_path) -> Path:
    """Mean regret and mean per-window solve time against the window size, per solver."""
    plt = _pyplot()
    rows = read_csv_rows(sweep_csv)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for solver in dict.fromkeys(r["solver"] for r in rows):
        sel = [r for r in rows if r["solver"] == solver]
        sizes = [int(r["size"]) for r in sel]
        mean = np.array([float(r["mean_regret"]) for r in sel])
        std = np.array([float(r["std_regret"]) for r in sel])
        line, = axes[0].plot(sizes, mean, marker="o", label=solver)
        axes[0].fill_between(sizes, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)
        axes[1].plot(sizes, [float(r["mean_solve_time"]) for r in sel], marker="o", label=solver)
    axes[0].set_xlabel("planning window size")
    axes[0].set_ylabel("cumulative regret")
    axes[1].set_xlabel("planning window size")
    axes[1].set_ylabel("seconds per window")
    axes[1].set_yscale("log")
    for ax in axes:
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)
