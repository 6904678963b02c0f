from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from kbsf.core import ConfigurationError
from kbsf.envs import make_env
from kbsf.harness import (
    Agent,
    ExperimentConfig,
    aggregate,
    agent_from_dict,
    bench,
    collect_samples,
    committee_actions,
    committee_decide,
    evaluate,
    pooled_difference,
    run_experiment,
    runtime_regression,
    summarize,
    sweep,
    train_agent,
)

SMOKE = dict(task="puddle", n=300, m=10, tau=0.1, tau_bar=0.1, runs=1, seed=3)


def const_agent(action: int, A: int = 3) -> Agent:
    return Agent(lambda S: np.tile(np.eye(A)[action], (len(S), 1)), 1)


def test_puddle_smoke_run(tmp_path):
    res = run_experiment(ExperimentConfig(**SMOKE, out=str(tmp_path)))
    assert res.errors == [None] and np.isfinite(res.returns[0])
    assert 0 <= res.success[0] <= 1 and res.final_m == [10]
    for name in ("metrics.csv", "timings.csv", "summary.json"):
        assert (tmp_path / name).exists()
    assert json.loads((tmp_path / "summary.json").read_text())["return"]["count"] == 1


def test_metrics_file_is_deterministic(tmp_path):
    cfg = ExperimentConfig(**{**SMOKE, "runs": 2})
    run_experiment(replace(cfg, out=str(tmp_path / "a")))
    run_experiment(replace(cfg, out=str(tmp_path / "b")))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_timing_does_not_change_metrics():
    on = run_experiment(ExperimentConfig(**{**SMOKE, "runs": 2}, timing=True))
    off = run_experiment(ExperimentConfig(**{**SMOKE, "runs": 2}, timing=False))
    assert on.metric_rows() == off.metric_rows()
    assert all(t == 0 for t in off.build_seconds + off.solve_seconds)
    assert all(t > 0 for t in on.build_seconds)


def test_kbsf_with_all_end_states_matches_kbrl():
    base = dict(task="puddle", n=2000, m=2000, tau=0.1, tau_bar=1e-6, runs=2, seed=11)
    kbrl = run_experiment(ExperimentConfig(**base, algorithm="kbrl"))
    kbsf = run_experiment(ExperimentConfig(**base, algorithm="kbsf", selection="ends"))
    # walls clip some moves onto identical end states, which share one representative
    assert all(1990 <= m <= 2000 for m in kbsf.final_m)
    assert np.allclose(kbsf.returns, kbrl.returns, atol=1e-9)


def test_ikbsf_run_records_model_size():
    cfg = ExperimentConfig(task="puddle", algorithm="ikbsf", n=400, m=4, selection="grid", runs=1, seed=0,
                           incremental=dict(t_m=100, t_v=200, growth_threshold=0.5))
    res = run_experiment(cfg)
    assert res.errors == [None]
    hist = res.m_history[0]
    assert hist[0] == (0, 4) and hist[-1][0] == 400 and res.final_m[0] >= 4


def test_failed_run_is_recorded():
    cfg = ExperimentConfig(**{**SMOKE, "selection": "kmeans", "m": 10_000})
    res = run_experiment(cfg)
    assert res.errors[0] is not None and np.isnan(res.returns[0])
    assert summarize(res)["failed_runs"] == 1


def test_committee_tie_is_a_fair_coin():
    agents = [const_agent(0), const_agent(2)]
    rng = np.random.default_rng(0)
    picks = committee_actions(agents, np.zeros((10_000, 1)), rng)
    assert set(np.unique(picks)) == {0, 2}
    assert abs(np.mean(picks == 0) - 0.5) <= 0.02


def test_committee_majority_and_single_member(rng):
    agents = [const_agent(1), const_agent(1), const_agent(0)]
    assert committee_decide(agents, [0.0], rng) == 1
    q = lambda S: np.column_stack([S[:, 0], -S[:, 0]])  # noqa: E731
    solo = Agent(q, 1)
    S = rng.normal(size=(50, 1))
    assert np.array_equal(committee_actions([solo], S, rng), solo.greedy(S))
    with pytest.raises(ConfigurationError):
        committee_decide([], [0.0], rng)


def test_committee_run():
    res = run_experiment(ExperimentConfig(**{**SMOKE, "committee": 3}))
    assert res.errors == [None]


def test_aggregate_coverage():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(1000):
        s = aggregate(rng.normal(2.0, 1.5, 30), 0.99)
        hits += s.low <= 2.0 <= s.high
    assert 0.98 <= hits / 1000 <= 1.0


def test_aggregate_examples():
    s = aggregate([3.0] * 5)
    assert s.mean == 3.0 and s.low == s.high == 3.0
    assert aggregate([0.0, 2.0]).mean == 1.0
    one = aggregate([4.0])
    assert one.mean == 4.0 and one.low is None
    assert aggregate([np.nan]).count == 0


def test_pooled_difference():
    d, h = pooled_difference([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert d == 0.0 and h > 0


def test_runtime_regression_on_linear_data():
    reg = runtime_regression([1e3, 1e4, 1e5], [0.01, 0.1, 1.0])
    assert reg.loglog_slope == pytest.approx(1.0) and reg.r_squared == pytest.approx(1.0)


def test_config_validation():
    for bad in (dict(task="chess"), dict(algorithm="dqn"), dict(tau=0), dict(runs=0), dict(query="x"),
                dict(selection="magic")):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**bad)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"nn": 3})
    with pytest.raises(ConfigurationError):
        ExperimentConfig(weights="bogus").kernels(make_env("puddle"))


def test_config_round_trip():
    cfg = ExperimentConfig(task="single_pole", n=50, incremental=dict(t_m=7, t_v=9), epsilon_schedule=[[10, 0.1]])
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()


def test_range_weights_scale_by_test_box():
    k, kb = ExperimentConfig(task="single_pole", weights="range").kernels(make_env("single_pole"))
    assert np.allclose(k.weights, 1 / np.array([1.2, 0.24, 18 * np.pi / 180, 75 * np.pi / 180]) ** 2)
    assert kb.weights == k.weights


def test_collect_samples_counts_and_resets(rng):
    env = make_env("single_pole", seed=0)
    S = collect_samples(env, 1234, rng, lanes=50)
    assert S.n == 1234 and S.num_actions == 2
    assert any(t.any() for t in S.terminal)


def test_evaluate_discounts_and_flags():
    env = make_env("puddle", seed=0)
    ev = evaluate(lambda S: np.full(len(S), 0), env, np.array([[0.97, 0.96]]), np.random.default_rng(0))
    assert ev.returns[0] == 5.0 and ev.success[0] and ev.steps[0] == 1


def test_exported_agents_reproduce_q(rng):
    env = make_env("puddle", seed=0)
    S = rng.uniform(0, 1, (20, 2))
    for extra in (dict(algorithm="kbrl"), dict(algorithm="kbsf"), dict(algorithm="kbsf", query="reps")):
        cfg = ExperimentConfig(**{**SMOKE, **extra})
        agent = train_agent(cfg, env, np.random.default_rng(0))
        back = agent_from_dict(json.loads(json.dumps(agent.export())))
        assert np.allclose(back.q(S), agent.q(S), atol=1e-10)


def test_sweep_orders_best_first():
    rows = sweep(ExperimentConfig(**SMOKE), {"tau": [0.05, 0.5]})
    assert len(rows) == 2 and rows[0]["mean"] >= rows[1]["mean"]


def test_bench_rows():
    rows = bench(ExperimentConfig(**SMOKE), [200, 400], "kbsf", repeats=1)
    assert [r.n for r in rows] == [200, 400] and all(r.total > 0 for r in rows)
