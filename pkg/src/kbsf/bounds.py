"""Computable error bounds for the stochastic-factorization approximation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .batch import Factorization, ReducedModel
from .core import DomainError, FiniteMDP, dense
from .dp import SolverConfig, bellman_backup, solve
from .kbrl import KbrlModel
from .kernels import KernelSpec, distances

DIAGNOSTIC_MAX_N = 2000
TIGHT = SolverConfig(epsilon=1e-10, max_policy_iterations=1000)


def inf_norm(A) -> float:
    """Induced infinity norm (max absolute row sum); plain max-abs for vectors."""
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(A))) if A.ndim == 1 else float(np.max(np.abs(A).sum(axis=1)))


def sigma_of_D(Ddot) -> float:
    """``max_i (1 - max_j d_ij)`` over the stacked rows of the blocks."""
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in (Ddot if isinstance(Ddot, (list, tuple)) else [Ddot])]
    blocks = [b for b in blocks if b.size]
    if not blocks:
        raise DomainError("empty D")
    return float(max(np.max(1.0 - b.max(axis=1)) for b in blocks))


@dataclass
class BoundReport:
    max_reward_gap: float
    sigma_D: float
    p_error: float
    r_error: float
    xi_v: float
    gamma: float
    epsilon_qbar: float | None = None

    def recompute(self) -> float:
        g = self.gamma
        return self.r_error / (1 - g) + self.max_reward_gap / (1 - g) ** 2 * (g / 2 * self.p_error + self.sigma_D)

    def consistent(self, tol: float = 1e-9) -> bool:
        parts = (self.max_reward_gap, self.sigma_D, self.p_error, self.r_error, self.xi_v)
        return all(x >= 0 for x in parts) and abs(self.recompute() - self.xi_v) <= tol * max(1.0, self.xi_v)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _errors(kbrl: KbrlModel, f: Factorization, reduced: ReducedModel) -> tuple[float, float, float, float]:
    if kbrl.samples.has_terminals():
        raise DomainError("bounds are defined for models without terminal transitions")
    n = kbrl.mdp.num_states
    if n > DIAGNOSTIC_MAX_N:
        raise DomainError(f"diagnostics are capped at n={DIAGNOSTIC_MAX_N}")
    D = f.D()
    if D.shape[0] != n or reduced.num_actions != kbrl.mdp.num_actions:
        raise DomainError("KBRL model and factorization do not describe the same samples")
    p_err = r_err = 0.0
    for a in range(kbrl.mdp.num_actions):
        p_err = max(p_err, inf_norm(dense(kbrl.mdp.P[a]) - D @ f.K(a)))
        r_err = max(r_err, inf_norm(kbrl.mdp.r[a] - D @ reduced.r[a]))
    gap = float(reduced.r.max() - reduced.r.min())
    return gap, sigma_of_D(f.Ddot), p_err, r_err


def xi_v(kbrl: KbrlModel, f: Factorization, reduced: ReducedModel) -> BoundReport:
    """Bound on ``||vhat* - Gamma D Qbar*||_inf``."""
    gap, sig, p_err, r_err = _errors(kbrl, f, reduced)
    g = kbrl.gamma
    xi = r_err / (1 - g) + gap / (1 - g) ** 2 * (g / 2 * p_err + sig)
    return BoundReport(gap, sig, p_err, r_err, xi, g)


def prop2_query_bound(report: BoundReport) -> float:
    """Bound on ``|Qhat(s, a) - Qtilde(s, a)|`` for any query state."""
    return report.gamma * report.xi_v


def two_mdp_q_bound(M: FiniteMDP, Mt: FiniteMDP) -> float:
    """Bound on ``max |Q*_M - Q*_Mt|`` for two MDPs over the same states and actions."""
    if (M.num_states, M.num_actions, M.gamma) != (Mt.num_states, Mt.num_actions, Mt.gamma):
        raise DomainError("MDPs differ in states, actions or discount")
    g = M.gamma
    r_err = max(inf_norm(M.r[a] - Mt.r[a]) for a in range(M.num_actions))
    p_err = max(inf_norm(dense(M.P[a]) - dense(Mt.P[a])) for a in range(M.num_actions))
    gap = float(M.r.max() - M.r.min())
    return r_err / (1 - g) + g * (2 - g) / (2 * (1 - g) ** 2) * gap * p_err


def epsilon_qbar(reduced: ReducedModel) -> float:
    """``max |Qbar* - Qbar|`` with ``Qbar*`` from a tight solve of the current model."""
    if reduced.qbar is None:
        raise RuntimeError("reduced model has no Qbar")
    star = solve(reduced.to_mdp(), TIGHT).Q
    return float(np.max(np.abs(star - reduced.qbar)))


def prop4_online_bound(kbrl_t: KbrlModel, f_t: Factorization, reduced_t: ReducedModel, eps_qbar: float) -> float:
    """Bound on ``|Qhat_t(s, a) - Qtilde_t(s, a)|`` at the state reached at time t."""
    gap, sig, p_err, r_err = _errors(kbrl_t, f_t, reduced_t)
    g = kbrl_t.gamma
    return r_err / (1 - g) + gap / (1 - g) ** 2 * (g * (2 - g) / 2 * p_err + sig) + eps_qbar


def taubar_threshold(s, reps, w: int, alpha: float, kernel: KernelSpec) -> float:
    """Width below which the ``m - w`` farthest representatives carry less than
    ``alpha`` times the kernel mass of the ``w`` closest ones."""
    R = np.atleast_2d(np.asarray(reps, dtype=float))
    m = len(R)
    if not 1 <= w <= m - 1:
        raise DomainError("w must lie in [1, m - 1]")
    if kernel.A_phi is None:
        raise DomainError(f"kernel {kernel.phi!r} does not satisfy the exponential decay assumption")
    d = np.sort(distances(kernel, np.asarray(s, dtype=float)[None, :], R)[0])
    dw, dw1 = d[w - 1], d[w]
    if not dw < dw1:
        raise DomainError("dist(s, w) must be strictly smaller than dist(s, w + 1)")
    phi1 = math.inf if kernel.B_phi == 0 else dw / kernel.B_phi
    ratio = alpha * w / ((m - w) * kernel.lambda_phi)
    phi2 = math.inf if ratio >= 1 else (dw - dw1) / math.log(ratio)
    return min(phi1, phi2)


def fixed_point_of(E: np.ndarray, v: np.ndarray, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """A fixed point of the stochastic matrix E reached from v.

    Iterates the lazy map ``u <- (u + E u) / 2``, which shares E's fixed points
    and converges even when E is periodic.
    """
    u = np.asarray(v, dtype=float)
    for _ in range(max_iter):
        nxt = 0.5 * (u + E @ u)
        if np.max(np.abs(nxt - u)) < tol:
            return nxt
        u = nxt
    raise RuntimeError("fixed-point iteration did not converge")


@dataclass
class AveragerReport:
    xi: float
    v_minus_u: float
    v_minus_vcheck: float
    reduction_error: float | None = None


def _check_exact(M: FiniteMDP, E, L, rbb, tol: float = 1e-9) -> None:
    for a in range(M.num_actions):
        if np.max(np.abs(E @ L[a] - dense(M.P[a]))) > tol or np.max(np.abs(E @ rbb[a] - M.r[a])) > tol:
            raise DomainError("E L^a = P^a and E rbb^a = r^a must hold")


def averager_bound(M: FiniteMDP, E, L, rbb) -> AveragerReport:
    """``xi' = 2g/(1-g) ||v* - u|| + g(1+g)/(1-g) ||v* - vcheck*||`` in the sup norm."""
    E = np.asarray(E, dtype=float)
    L = [np.asarray(x, dtype=float) for x in L]
    rbb = [np.asarray(x, dtype=float) for x in rbb]
    _check_exact(M, E, L, rbb)
    g = M.gamma
    vstar = solve(M, TIGHT).v
    u = fixed_point_of(E, vstar)
    vcheck = solve(FiniteMDP(L, np.array(rbb), g), TIGHT).v
    a, b = float(np.max(np.abs(vstar - u))), float(np.max(np.abs(vstar - vcheck)))
    return AveragerReport(2 * g / (1 - g) * a + g * (1 + g) / (1 - g) * b, a, b)


def averager_reduction(M: FiniteMDP, E, L, rbb) -> AveragerReport:
    """Reduce to the m nonzero columns of E (``D = E H^T``, ``K^a = H L^a``,
    ``rbar^a = H rbb^a``) and measure ``||v* - Gamma D Qbar*||_inf`` against xi'."""
    E = np.asarray(E, dtype=float)
    report = averager_bound(M, E, L, rbb)
    cols = np.flatnonzero(np.any(np.abs(E) > 1e-12, axis=0))
    H = np.zeros((len(cols), E.shape[1]))
    H[np.arange(len(cols)), cols] = 1.0
    D = E @ H.T
    K = [H @ np.asarray(x, dtype=float) for x in L]
    rbar = np.array([H @ np.asarray(x, dtype=float) for x in rbb])
    Pbar = [k @ D for k in K]
    Mbar = FiniteMDP(Pbar, rbar, M.gamma, tol=1e-8)
    qbar = solve(Mbar, TIGHT).Q
    vstar = solve(M, TIGHT).v
    report.reduction_error = float(np.max(np.abs(vstar - (D @ qbar).max(axis=1))))
    return report


def bellman_residual(M: FiniteMDP, v) -> float:
    return float(np.max(np.abs(bellman_backup(M, v).max(axis=1) - v)))
