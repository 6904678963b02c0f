from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbsf.core import DomainError, FiniteMDP, ValueFunction
from kbsf.dp import (
    SolverConfig,
    bellman_backup,
    bellman_operator,
    evaluate_policy,
    modified_policy_iteration,
    solve,
    value_iteration,
)

from .conftest import random_mdp

TIGHT = SolverConfig(epsilon=1e-10, max_policy_iterations=1000)


def test_backup_without_lookahead_is_reward(rng):
    M = random_mdp(rng, 4, 2, 0.0)
    assert np.allclose(bellman_backup(M, rng.normal(size=4)), M.r.T)


def test_backup_single_state():
    M = FiniteMDP([[[1.0]]], [[1.0]], 0.9)
    assert bellman_backup(M, [10.0]).tolist() == [[1.0 + 0.9 * 10.0]]


def test_backup_of_zero_is_reward(rng):
    M = random_mdp(rng, 3, 3, 0.7)
    assert np.allclose(bellman_backup(M, np.zeros(3)), M.r.T)


def test_backup_shape_check(rng):
    with pytest.raises(DomainError):
        bellman_backup(random_mdp(rng, 3, 1, 0.5), np.zeros(2))


def test_value_iteration_self_loop():
    M = FiniteMDP([[[1.0]]], [[1.0]], 0.9)
    assert value_iteration(M).v[0] == pytest.approx(1 / (1 - 0.9), abs=1e-5)


def test_value_iteration_zero_reward(rng):
    M = FiniteMDP([rng.dirichlet(np.ones(3), 3)], np.zeros((1, 3)), 0.95)
    assert np.all(value_iteration(M).v == 0)


def test_value_iteration_two_state_chain():
    M = FiniteMDP([[[0.0, 1.0], [0.0, 1.0]]], [[0.0, 1.0]], 0.5)
    v = value_iteration(M, TIGHT).v
    # geometric series: v1 = 1 / (1 - 0.5), v0 = 0.5 v1
    assert np.allclose(v, [1.0, 2.0], atol=1e-8)
    u = np.zeros(2)
    for _ in range(1000):
        u = bellman_operator(M, u)
    assert np.allclose(v, u, atol=1e-8)


def test_value_iteration_returns_final_backup(rng):
    M = random_mdp(rng, 5, 2, 0.9)
    vf = value_iteration(M)
    assert np.allclose(vf.Q.max(axis=1), vf.v)


@pytest.mark.parametrize("seed", range(10))
def test_mpi_matches_tight_value_iteration(seed):
    M = random_mdp(np.random.default_rng(seed), 5, 2, 0.9)
    vi = value_iteration(M, TIGHT)
    v, pi = modified_policy_iteration(M)
    assert np.allclose(v.Q, vi.Q, atol=1e-5)


def test_mpi_identical_actions():
    rng = np.random.default_rng(3)
    P = rng.dirichlet(np.ones(4), 4)
    r = rng.normal(size=4)
    M = FiniteMDP([P, P], [r, r], 0.8)
    assert np.allclose(modified_policy_iteration(M)[0].v, value_iteration(M, TIGHT).v, atol=1e-5)


def test_mpi_warm_start_at_fixed_point(rng):
    M = random_mdp(rng, 6, 3, 0.9)
    vstar = solve(M, TIGHT)
    vf, _ = modified_policy_iteration(M, SolverConfig(warm_start=ValueFunction(vstar.v, vstar.Q)))
    assert vf.iterations == 1


@pytest.mark.parametrize("large_eval", ["krylov", "sweeps"])
def test_iterative_evaluation_paths(large_eval, rng):
    M = random_mdp(rng, 30, 3, 0.95)
    want = solve(M, TIGHT).v
    got = solve(M, SolverConfig(epsilon=1e-8, exact_eval_limit=0, large_eval=large_eval, max_policy_iterations=500)).v
    assert np.allclose(got, want, atol=1e-6)


def test_evaluate_policy_matches_linear_solve(rng):
    M = random_mdp(rng, 4, 2, 0.9)
    pi = np.array([0, 1, 1, 0])
    v = evaluate_policy(M, pi)
    P = np.array([M.P[pi[i]][i] for i in range(4)])
    r = M.r[pi, np.arange(4)]
    assert np.allclose(v, r + 0.9 * P @ v)


def test_terminal_mass_has_zero_value():
    # one state that ends the episode with probability 1 after reward 3
    M = FiniteMDP([[[0.0]]], [[3.0]], 0.9, term=[[1.0]])
    assert solve(M, TIGHT).v[0] == pytest.approx(3.0)


def test_solver_config_validation():
    with pytest.raises(DomainError):
        SolverConfig(epsilon=0)
    with pytest.raises(DomainError):
        SolverConfig(max_policy_iterations=0)
    with pytest.raises(DomainError):
        SolverConfig(large_eval="magic")


def test_unknown_method(rng):
    with pytest.raises(DomainError):
        solve(random_mdp(rng, 2, 1, 0.5), method="lp")


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.integers(1, 3), st.floats(0.0, 0.99), st.integers(0, 2**31 - 1))
def test_bellman_operator_is_a_contraction(n, A, gamma, seed):
    rng = np.random.default_rng(seed)
    M = random_mdp(rng, n, A, gamma)
    v, u = rng.normal(size=n) * 10, rng.normal(size=n) * 10
    lhs = np.max(np.abs(bellman_operator(M, v) - bellman_operator(M, u)))
    assert lhs <= gamma * np.max(np.abs(v - u)) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_fixed_point_residual(n, A, seed):
    rng = np.random.default_rng(seed)
    M = random_mdp(rng, n, A, 0.9)
    eps = 1e-6
    v = value_iteration(M, SolverConfig(epsilon=eps)).v
    assert np.max(np.abs(bellman_operator(M, v) - v)) <= 10 * eps


@pytest.mark.parametrize("seed", range(100))
def test_mpi_policy_matches_value_iteration(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(2, 21))
    M = random_mdp(rng, n, int(rng.integers(1, 4)), 0.9)
    vi = value_iteration(M, TIGHT)
    vf, pi = modified_policy_iteration(M)
    # compare policies by value: ties between near-equal actions may pick different indices
    v_pi = evaluate_policy(M, pi.actions)
    v_vi = evaluate_policy(M, np.argmax(vi.Q, axis=1))
    assert np.allclose(v_pi, v_vi, atol=1e-6)
