"""Dynamic programming on finite MDPs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .core import BlockColumns, DomainError, FiniteMDP, Policy, ValueFunction


@dataclass(frozen=True)
class SolverConfig:
    """Stop tolerance and iteration budgets.

    ``exact_eval_limit``: policies on MDPs with at most this many states are
    evaluated by a direct linear solve (plain policy iteration). Larger MDPs use
    ``large_eval``: ``"krylov"`` solves the evaluation system with GMRES,
    ``"sweeps"`` runs ``inner_eval_sweeps`` partial-evaluation sweeps.
    """

    epsilon: float = 1e-6
    max_policy_iterations: int = 30
    inner_eval_sweeps: int = 20
    warm_start: ValueFunction | None = None
    exact_eval_limit: int = 2000
    max_value_iterations: int = 1_000_000
    large_eval: str = "krylov"

    def __post_init__(self):
        if self.large_eval not in ("krylov", "sweeps"):
            raise DomainError(f"unknown evaluation method {self.large_eval!r}")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if min(self.max_policy_iterations, self.inner_eval_sweeps, self.max_value_iterations) < 1:
            raise DomainError("iteration counts must be >= 1")


def stop_threshold(epsilon: float, gamma: float) -> float:
    """Successive-iterate gap below which the last iterate is epsilon/2-close to v*."""
    return np.inf if gamma == 0 else epsilon * (1 - gamma) / (2 * gamma)


def bellman_backup(M: FiniteMDP, v) -> np.ndarray:
    """Operator Delta: ``Q[i, a] = r^a_i + gamma (P^a v)_i``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (M.num_states,):
        raise DomainError(f"v has shape {v.shape}, expected {(M.num_states,)}")
    Q = np.empty((M.num_states, M.num_actions))
    for a in range(M.num_actions):
        Q[:, a] = M.r[a] + M.gamma * (M.P[a] @ v)
    return Q


def bellman_operator(M: FiniteMDP, v) -> np.ndarray:
    """T = Gamma Delta."""
    return bellman_backup(M, v).max(axis=1)


def _initial_values(M: FiniteMDP, config: SolverConfig) -> np.ndarray:
    if config.warm_start is not None:
        v = np.asarray(config.warm_start.v, dtype=float)
        if v.shape != (M.num_states,):
            raise DomainError("warm start has the wrong length")
        return v.copy()
    # a lower bound on v*, so that Tv >= v and the iterates increase monotonically
    low = min(0.0, float(M.r.min())) / (1 - M.gamma)
    return np.full(M.num_states, low)


def value_iteration(M: FiniteMDP, config: SolverConfig = SolverConfig()) -> ValueFunction:
    thr = stop_threshold(config.epsilon, M.gamma)
    v = _initial_values(M, config) if config.warm_start is not None else np.zeros(M.num_states)
    for it in range(1, config.max_value_iterations + 1):
        Q = bellman_backup(M, v)
        v_new = Q.max(axis=1)
        gap = np.max(np.abs(v_new - v))
        v = v_new
        if gap <= thr:
            return ValueFunction(v, Q, iterations=it)
    return ValueFunction(v, Q, iterations=config.max_value_iterations, converged=False)


def policy_matrix(M: FiniteMDP, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``P_pi`` and ``r_pi``."""
    n = M.num_states
    P = np.zeros((n, n))
    r = M.r[pi, np.arange(n)]
    for a in range(M.num_actions):
        rows = np.flatnonzero(pi == a)
        if len(rows) == 0:
            continue
        p = M.P[a]
        if isinstance(p, BlockColumns):
            P[np.ix_(rows, np.arange(p.start, p.start + p.block.shape[1]))] = p.block[rows]
        else:
            P[rows] = p[rows]
    return P, r


def evaluate_policy(M: FiniteMDP, pi: np.ndarray) -> np.ndarray:
    """Exact ``v_pi = (I - gamma P_pi)^{-1} r_pi``."""
    P, r = policy_matrix(M, pi)
    return np.linalg.solve(np.eye(M.num_states) - M.gamma * P, r)


def _policy_operator(M: FiniteMDP, pi: np.ndarray):
    """``v -> P_pi v`` with each action's rows extracted once."""
    parts = []
    for a in range(M.num_actions):
        rows = np.flatnonzero(pi == a)
        if len(rows) == 0:
            continue
        p = M.P[a]
        if isinstance(p, BlockColumns):
            parts.append((rows, p.block[rows], slice(p.start, p.start + p.block.shape[1])))
        else:
            parts.append((rows, p[rows], slice(None)))

    def apply(v: np.ndarray) -> np.ndarray:
        out = np.empty(M.num_states)
        for rows, B, cols in parts:
            out[rows] = B @ v[cols]
        return out

    return apply


def _sweeps(M: FiniteMDP, pi: np.ndarray, v: np.ndarray, count: int) -> np.ndarray:
    P = _policy_operator(M, pi)
    r = M.r[pi, np.arange(M.num_states)]
    for _ in range(count):
        v = r + M.gamma * P(v)
    return v


def _krylov(M: FiniteMDP, pi: np.ndarray, v: np.ndarray, config: SolverConfig) -> np.ndarray:
    """GMRES on ``(I - gamma P_pi) v = r_pi``, finished with sweeps if it stalls."""
    n = M.num_states
    P = _policy_operator(M, pi)
    r = M.r[pi, np.arange(n)]
    op = LinearOperator((n, n), matvec=lambda x: x - M.gamma * P(x), dtype=float)
    x, info = gmres(op, r, x0=v, rtol=1e-13, atol=0.0, restart=60, maxiter=20)
    if info != 0:
        x = _sweeps(M, pi, x, config.inner_eval_sweeps)
    return x


def modified_policy_iteration(M: FiniteMDP, config: SolverConfig = SolverConfig()) -> tuple[ValueFunction, Policy]:
    thr = stop_threshold(config.epsilon, M.gamma)
    exact = M.num_states <= config.exact_eval_limit
    v = _initial_values(M, config)
    for it in range(1, config.max_policy_iterations + 1):
        Q = bellman_backup(M, v)
        v_new = Q.max(axis=1)
        pi = np.argmax(Q, axis=1)
        if np.max(np.abs(v_new - v)) <= thr:
            return ValueFunction(v_new, Q, iterations=it), Policy(pi)
        if exact:
            v = evaluate_policy(M, pi)
        elif config.large_eval == "krylov":
            v = _krylov(M, pi, v_new, config)
        else:
            v = _sweeps(M, pi, v_new, config.inner_eval_sweeps)
    Q = bellman_backup(M, v)
    vf = ValueFunction(Q.max(axis=1), Q, iterations=config.max_policy_iterations, converged=False)
    return vf, Policy(np.argmax(Q, axis=1))


def solve(M: FiniteMDP, config: SolverConfig = SolverConfig(), method: str = "mpi") -> ValueFunction:
    if method == "mpi":
        return modified_policy_iteration(M, config)[0]
    if method == "vi":
        return value_iteration(M, config)
    raise DomainError(f"unknown solver {method!r}")
