import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smooco.bench import (
    STEP_COLUMNS,
    AlgorithmSpec,
    ExperimentConfig,
    algorithm_by_name,
    cumulative_regret,
    offline_benchmark,
    plot_decomposition,
    plot_regret,
    plot_sweep,
    read_csv_rows,
    round_robin,
    run_experiment,
    run_trial,
    setup_trial,
    sweep_windows,
    write_results,
    write_sweep,
)
from smooco.core import ParameterError, ProblemShape, ShapeError
from smooco.solve import PlanningProblem, exact_plan_dp, make_solver
from smooco.traffic import TrafficGenConfig

SMALL = ExperimentConfig(
    traffic=TrafficGenConfig(k=3),
    m=2,
    warmup=10,
    online_steps=12,
    trials=3,
    seed=5,
    algorithms=tuple(algorithm_by_name(n) for n in ("static", "ftp", "short-term", "dynamic")),
)


def random_ledger_inputs(rng, T, k=3, m=2):
    shape = ProblemShape(k, m, tuple(rng.uniform(0, 2, size=m)))
    th = rng.uniform(0, 5, size=(T, k))
    a = [tuple(int(v) for v in rng.integers(0, m, size=k)) for _ in range(T)]
    b = [tuple(int(v) for v in rng.integers(0, m, size=k)) for _ in range(T)]
    return shape, th, a, b


@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_ledger_decomposition_identity(seed, T):
    rng = np.random.default_rng(seed)
    shape, th, a, b = random_ledger_inputs(rng, T)
    lg = cumulative_regret(a, b, th, (0, 1, 0), shape)
    np.testing.assert_allclose(lg.cum_regret, lg.cum_imb_regret + lg.cum_sw_regret, atol=1e-9)
    np.testing.assert_allclose(lg.cum_imb_regret, np.cumsum(lg.imbalance - lg.bench_imbalance), atol=1e-9)
    np.testing.assert_allclose(lg.cum_sw_regret, np.cumsum(lg.switching - lg.bench_switching), atol=1e-9)
    assert len(lg) == T


def test_ledger_self_regret_zero_and_length_check():
    rng = np.random.default_rng(1)
    shape, th, a, _ = random_ledger_inputs(rng, 10)
    lg = cumulative_regret(a, a, th, (0, 0, 0), shape)
    assert np.all(lg.cum_regret == 0)
    with pytest.raises(ShapeError):
        cumulative_regret(a[:-1], a, th, (0, 0, 0), shape)


def test_benchmark_single_chunk_is_global_optimum():
    rng = np.random.default_rng(2)
    shape = ProblemShape(3, 2, (0.4, 1.3))
    th = rng.uniform(0, 5, size=(9, 3))
    whole = offline_benchmark(th, (0, 1, 0), shape, chunk=9, solver=make_solver("exact"))
    opt = exact_plan_dp(PlanningProblem(shape, th, (0, 1, 0)))
    assert whole.total_cost == pytest.approx(opt.total_cost, abs=1e-12)
    assert whole.solver_tag == "chunked-9"


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
@settings(max_examples=40)
def test_benchmark_chunks_never_beat_global(seed, chunk):
    rng = np.random.default_rng(seed)
    shape = ProblemShape(3, 2, tuple(rng.uniform(0, 2, size=2)))
    th = rng.uniform(0, 5, size=(12, 3))
    small = offline_benchmark(th, (0, 0, 1), shape, chunk=chunk, solver=make_solver("exact"))
    full = offline_benchmark(th, (0, 0, 1), shape, chunk=12, solver=make_solver("exact"))
    one = offline_benchmark(th, (0, 0, 1), shape, chunk=1, solver=make_solver("exact"))
    assert full.total_cost <= small.total_cost + 1e-9
    assert small.total_cost <= one.total_cost + 1e-9 or chunk != 1


def test_benchmark_zero_traffic():
    shape = ProblemShape(4, 3, (1.0, 0.5, 0.2))
    res = offline_benchmark(np.zeros((11, 4)), (0, 1, 2, 0), shape, chunk=5)
    assert set(res.assignments) == {(0, 1, 2, 0)} and res.total_cost == 0.0
    with pytest.raises(ParameterError):
        offline_benchmark(np.zeros((3, 4)), (0, 1, 2, 0), shape, chunk=0)


def test_round_robin():
    assert round_robin(5, 3) == (0, 1, 2, 0, 1)


def test_algorithm_lookup():
    assert algorithm_by_name("long-term") == AlgorithmSpec("long-term", "fixed", 10)
    assert algorithm_by_name("fixed-7").window == 7
    with pytest.raises(ParameterError):
        algorithm_by_name("mpc")
    with pytest.raises(ParameterError):
        AlgorithmSpec("x", "fixed")


def test_config_validation():
    with pytest.raises(ParameterError):
        ExperimentConfig(warmup=1)
    with pytest.raises(ShapeError):
        ExperimentConfig(unit_costs=(1.0, 1.0))
    with pytest.raises(ParameterError):
        ExperimentConfig(algorithms=(AlgorithmSpec("a", "static"), AlgorithmSpec("a", "ogd")))


def test_static_on_zero_traffic_has_zero_ledger():
    cfg = ExperimentConfig(traffic=TrafficGenConfig(k=3, component_weights=(0, 0, 0), base_offset=0.0),
                           m=2, warmup=5, online_steps=8, trials=1,
                           algorithms=(AlgorithmSpec("static", "static"),))
    lg = run_experiment(cfg, workers=1).ledgers("static")[0]
    for arr in dataclasses.astuple(lg):
        assert np.all(arr == 0)


def test_trial_order_independence():
    forward = [run_trial(SMALL, t) for t in range(3)]
    backward = [run_trial(SMALL, t) for t in reversed(range(3))][::-1]
    for a, b in zip(forward, backward):
        assert a.benchmark.assignments == b.benchmark.assignments
        for oa, ob in zip(a.outcomes, b.outcomes):
            assert oa.run.decisions == ob.run.decisions
            np.testing.assert_array_equal(oa.ledger.cum_regret, ob.ledger.cum_regret)


def test_experiment_outputs_deterministic(tmp_path):
    p1 = write_results(run_experiment(SMALL, workers=1), tmp_path / "a")
    p2 = write_results(run_experiment(SMALL, workers=2), tmp_path / "b")
    for a, b in zip(p1, p2):
        assert a.read_bytes() == b.read_bytes()
    rows = read_csv_rows(p1[0])
    assert tuple(rows[0].keys()) == STEP_COLUMNS
    assert len(rows) == 3 * 4 * 12
    names = {r["algorithm"] for r in read_csv_rows(p1[1])}
    assert names == {"static", "ftp", "short-term", "dynamic"}


def test_ledgers_consistent_with_step_costs():
    res = run_experiment(SMALL, workers=1)
    tr = res.trials[0]
    for o in tr.outcomes:
        lg = o.ledger
        np.testing.assert_allclose(lg.cum_regret[-1], np.sum(lg.imbalance + lg.switching)
                                   - np.sum(lg.bench_imbalance + lg.bench_switching))
        assert np.sum(lg.bench_imbalance + lg.bench_switching) == pytest.approx(tr.benchmark.total_cost)


def test_failures_are_recorded(tmp_path):
    cfg = dataclasses.replace(SMALL, trials=1, ftp_strategy="nonsense")
    res = run_experiment(cfg, workers=1)
    assert res.failed
    paths = write_results(res, tmp_path)
    assert paths[-1].name == "failures.csv"
    assert "ftp" in paths[-1].read_text()


def test_sweep_and_plots(tmp_path):
    cfg = dataclasses.replace(SMALL, trials=2, online_steps=8)
    sw = sweep_windows(cfg, [1, 2, 3], solvers=("iterative", "exact"), workers=1)
    assert len(sw.rows) == 6
    sizes, regrets = sw.curve("exact")
    assert sizes == [1, 2, 3] and len(regrets) == 3
    with pytest.raises(ParameterError):
        sweep_windows(cfg, [1, 1])
    sweep_csv = write_sweep(sw, tmp_path / "sweep.csv")
    steps_csv = write_results(run_experiment(cfg, workers=1), tmp_path)[0]
    for path in (plot_regret(steps_csv, tmp_path / "r.svg"), plot_decomposition(steps_csv, tmp_path / "d.svg"),
                 plot_sweep(sweep_csv, tmp_path / "s.svg")):
        assert path.read_text().lstrip().startswith("<?xml")
    # plots are reproducible byte for byte
    again = plot_regret(steps_csv, tmp_path / "r2.svg")
    assert again.read_bytes() == (tmp_path / "r.svg").read_bytes()


def test_unit_costs_fixed_when_given():
    cfg = dataclasses.replace(SMALL, unit_costs=(0.5, 1.5), trials=1, algorithms=(AlgorithmSpec("s", "static"),))
    setup = setup_trial(cfg, 0)
    assert setup.model.shape.unit_costs == (0.5, 1.5)
    assert setup.model.max_switch == pytest.approx(3 * 2.0)
    drawn = setup_trial(SMALL, 0).model.shape.unit_costs
    assert drawn == setup_trial(SMALL, 0).model.shape.unit_costs
    assert all(0 <= c <= 2 for c in drawn)
