"""Kernel-based RL: the finite MDP over sampled end states and its continuous Q queries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BlockColumns, ConfigurationError, DomainError, FiniteMDP, SampleSet, ValueFunction
from .dp import SolverConfig, solve
from .kernels import KernelSpec, NeighborIndex, normalized_matrix


@dataclass
class KbrlModel:
    """States are the end states of ``samples`` in action-major order."""

    mdp: FiniteMDP
    samples: SampleSet
    kernel: KernelSpec
    vstar: ValueFunction | None = None
    indexes: list[NeighborIndex] | None = None

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    def dense_P(self, a: int) -> np.ndarray:
        return self.mdp.P[a].toarray()


def _start_indexes(samples: SampleSet, kernel: KernelSpec) -> list[NeighborIndex] | None:
    if kernel.mu == 0:
        return None
    return [NeighborIndex(s, kernel) for s in samples.starts]


def build_kbrl(samples: SampleSet, kernel: KernelSpec, gamma: float) -> KbrlModel:
    if any(c == 0 for c in samples.counts):
        raise ConfigurationError("every action needs at least one transition")
    n = samples.n
    ends = samples.all_ends()
    indexes = _start_indexes(samples, kernel)
    P, r, term = [], [], []
    for a, off in enumerate(samples.offsets):
        K = normalized_matrix(kernel, ends, samples.starts[a], None if indexes is None else indexes[a])
        done = samples.terminal[a].astype(float)
        P.append(BlockColumns(K * (1.0 - done), off, n))
        r.append(K @ samples.rewards[a])
        term.append(K @ done)
    mdp = FiniteMDP(P, np.array(r), gamma, term=np.array(term) if samples.has_terminals() else None)
    return KbrlModel(mdp, samples, kernel, indexes=indexes)


def solve_kbrl(model: KbrlModel, config: SolverConfig = SolverConfig(), method: str = "mpi") -> ValueFunction:
    model.vstar = solve(model.mdp, config, method)
    return model.vstar


def sample_q(samples: SampleSet, kernel: KernelSpec, gamma: float, end_values: np.ndarray, S,
             indexes: list[NeighborIndex] | None = None) -> np.ndarray:
    """``Q(s, a) = sum_i kappa^a(s, s^a_i) [r^a_i + gamma V(shat^a_i)]`` for each row of ``S``.

    ``end_values`` holds ``V`` at every end state in action-major order; terminal
    end states contribute no future value.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] != samples.dim:
        raise DomainError("query dimension mismatch")
    Q = np.empty((len(S), samples.num_actions))
    for a, off in enumerate(samples.offsets):
        na = samples.counts[a]
        v = np.where(samples.terminal[a], 0.0, end_values[off:off + na])
        target = samples.rewards[a] + gamma * v
        W = normalized_matrix(kernel, S, samples.starts[a], None if indexes is None else indexes[a])
        Q[:, a] = W @ target
    return Q


def kbrl_q_many(model: KbrlModel, S) -> np.ndarray:
    if model.vstar is None:
        raise RuntimeError("KBRL model has not been solved")
    return sample_q(model.samples, model.kernel, model.gamma, model.vstar.v, S, model.indexes)


def kbrl_q(model: KbrlModel, s, a: int) -> float:
    return float(kbrl_q_many(model, s)[0, a])
