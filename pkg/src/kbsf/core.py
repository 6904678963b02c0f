"""Shared vocabulary: transitions, sample sets, finite MDPs, value functions, policies."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

R_MAX = 1e6
STOCHASTIC_TOL = 1e-9


class DomainError(ValueError):
    """Raised when an argument lies outside an operation's domain."""


class ConfigurationError(ValueError):
    """Raised for inconsistent model or experiment configuration."""


def as_state(x, dim: int | None = None) -> np.ndarray:
    s = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(s)):
        raise DomainError("state has non-finite entries")
    if dim is not None and s.shape[0] != dim:
        raise DomainError(f"state dimension {s.shape[0]} != {dim}")
    return s


@dataclass(frozen=True)
class Transition:
    start: np.ndarray
    action: int
    reward: float
    end: np.ndarray
    terminal: bool = False


@dataclass
class SampleSet:
    """Transitions grouped by action.

    ``starts[a]`` and ``ends[a]`` are ``(n_a, d)`` arrays, ``rewards[a]`` and
    ``terminal[a]`` have length ``n_a``. A terminal transition ends in a state
    whose value is zero (the episode stops there).
    """

    starts: list[np.ndarray]
    rewards: list[np.ndarray]
    ends: list[np.ndarray]
    terminal: list[np.ndarray] = field(default_factory=list)
    r_max: float = R_MAX

    def __post_init__(self):
        k = len(self.starts)
        if not (len(self.rewards) == len(self.ends) == k):
            raise DomainError("per-action lists must have equal length")
        if not self.terminal:
            self.terminal = [np.zeros(len(r), dtype=bool) for r in self.rewards]
        dims = set()
        for a in range(k):
            s = np.atleast_2d(np.asarray(self.starts[a], dtype=float))
            e = np.atleast_2d(np.asarray(self.ends[a], dtype=float))
            r = np.asarray(self.rewards[a], dtype=float).reshape(-1)
            t = np.asarray(self.terminal[a], dtype=bool).reshape(-1)
            if len(r) == 0:
                s = s.reshape(0, s.shape[1] if s.size else 0)
                e = e.reshape(0, e.shape[1] if e.size else 0)
            if not (len(s) == len(e) == len(r) == len(t)):
                raise DomainError(f"action {a}: inconsistent transition counts")
            if len(r):
                dims.add(s.shape[1])
                dims.add(e.shape[1])
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(e)) and np.all(np.isfinite(r))):
                raise DomainError("non-finite entries in sample set")
            if np.any(np.abs(r) > self.r_max):
                raise DomainError("reward magnitude exceeds r_max")
            self.starts[a], self.ends[a], self.rewards[a], self.terminal[a] = s, e, r, t
        if len(dims) > 1:
            raise DomainError(f"mixed state dimensions {sorted(dims)}")
        self._dim = dims.pop() if dims else 0

    @property
    def num_actions(self) -> int:
        return len(self.starts)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def counts(self) -> list[int]:
        return [len(r) for r in self.rewards]

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def offsets(self) -> np.ndarray:
        """Index of the first end state of each action in the action-major ordering."""
        return np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(int)

    def all_ends(self) -> np.ndarray:
        return np.concatenate(self.ends, axis=0)

    def all_rewards(self) -> np.ndarray:
        return np.concatenate(self.rewards)

    def all_terminal(self) -> np.ndarray:
        return np.concatenate(self.terminal)

    def has_terminals(self) -> bool:
        return any(t.any() for t in self.terminal)

    @classmethod
    def empty(cls, num_actions: int, dim: int) -> SampleSet:
        return cls(
            [np.zeros((0, dim)) for _ in range(num_actions)],
            [np.zeros(0) for _ in range(num_actions)],
            [np.zeros((0, dim)) for _ in range(num_actions)],
        )

    @classmethod
    def from_transitions(cls, transitions: Iterable[Transition], num_actions: int, dim: int | None = None) -> SampleSet:
        buckets: list[list[Transition]] = [[] for _ in range(num_actions)]
        for t in transitions:
            if not 0 <= t.action < num_actions:
                raise DomainError(f"action index {t.action} out of range")
            buckets[t.action].append(t)
        if dim is None:
            dim = next((len(b[0].start) for b in buckets if b), 0)
        return cls(
            [np.array([t.start for t in b], dtype=float).reshape(len(b), dim) for b in buckets],
            [np.array([t.reward for t in b], dtype=float) for b in buckets],
            [np.array([t.end for t in b], dtype=float).reshape(len(b), dim) for b in buckets],
            [np.array([t.terminal for t in b], dtype=bool) for b in buckets],
        )

    def transitions(self) -> Iterator[Transition]:
        for a in range(self.num_actions):
            for i in range(self.counts[a]):
                yield Transition(self.starts[a][i], a, float(self.rewards[a][i]), self.ends[a][i], bool(self.terminal[a][i]))

    def subset(self, masks: Sequence[np.ndarray]) -> SampleSet:
        return SampleSet(
            [s[m] for s, m in zip(self.starts, masks)],
            [r[m] for r, m in zip(self.rewards, masks)],
            [e[m] for e, m in zip(self.ends, masks)],
            [t[m] for t, m in zip(self.terminal, masks)],
        )

    def concat(self, other: SampleSet) -> SampleSet:
        if other.num_actions != self.num_actions:
            raise DomainError("action count mismatch")
        cat = lambda x, y: np.concatenate([x, y], axis=0)  # noqa: E731
        return SampleSet(
            [cat(x, y) for x, y in zip(self.starts, other.starts)],
            [cat(x, y) for x, y in zip(self.rewards, other.rewards)],
            [cat(x, y) for x, y in zip(self.ends, other.ends)],
            [cat(x, y) for x, y in zip(self.terminal, other.terminal)],
        )


def write_samples_csv(samples: SampleSet, path: str | Path) -> None:
    """One row per transition: ``action, s_1..s_d, reward, snext_1..snext_d, terminal``."""
    d = samples.dim
    header = ["action"] + [f"s_{i + 1}" for i in range(d)] + ["reward"] + [f"snext_{i + 1}" for i in range(d)] + ["terminal"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in samples.transitions():
            w.writerow([t.action, *map(repr, t.start.tolist()), repr(t.reward), *map(repr, t.end.tolist()), int(t.terminal)])


def read_samples_csv(path: str | Path, num_actions: int | None = None) -> SampleSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "action":
        raise DomainError("sample CSV must start with a header line beginning with 'action'")
    header = [h.strip() for h in rows[0]]
    d = sum(h.startswith("s_") for h in header)
    has_term = header[-1] == "terminal"
    ts = []
    for row in rows[1:]:
        if not row:
            continue
        vals = [float(x) for x in row]
        a = int(vals[0])
        ts.append(Transition(np.array(vals[1:1 + d]), a, vals[1 + d], np.array(vals[2 + d:2 + 2 * d]), bool(vals[-1]) if has_term else False))
    k = num_actions if num_actions is not None else (max(t.action for t in ts) + 1 if ts else 0)
    return SampleSet.from_transitions(ts, k, d)


class BlockColumns:
    """An ``n x N`` matrix whose nonzero entries lie in columns ``[start, start + width)``.

    Only the dense ``n x width`` block is stored, so products touch ``n * width``
    entries instead of ``n * N``.
    """

    def __init__(self, block: np.ndarray, start: int, total_cols: int):
        self.block = np.asarray(block, dtype=float)
        self.start = int(start)
        self.shape = (self.block.shape[0], int(total_cols))
        if self.start < 0 or self.start + self.block.shape[1] > total_cols:
            raise DomainError("block does not fit in the column range")

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.block @ v[self.start:self.start + self.block.shape[1]]

    def rows_matmul(self, rows: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.block[rows] @ v[self.start:self.start + self.block.shape[1]]

    def row_sums(self) -> np.ndarray:
        return self.block.sum(axis=1)

    def nonnegative(self) -> bool:
        return bool(np.all(self.block >= 0))

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[:, self.start:self.start + self.block.shape[1]] = self.block
        return out


def _row_sums(P) -> np.ndarray:
    return P.row_sums() if isinstance(P, BlockColumns) else np.asarray(P).sum(axis=1)


def dense(P) -> np.ndarray:
    return P.toarray() if isinstance(P, BlockColumns) else np.asarray(P, dtype=float)


class FiniteMDP:
    """Finite MDP ``(S, A, P^a, r^a, gamma)``.

    ``term[a][i]`` is the probability that action ``a`` taken in state ``i``
    ends the episode (moves to an implicit zero-value absorbing state); each row
    of ``P[a]`` plus ``term[a]`` sums to one. Without terminations every ``P[a]``
    is row-stochastic.
    """

    def __init__(self, P: Sequence, r, gamma: float, term=None, tol: float = STOCHASTIC_TOL):
        if not 0 <= gamma < 1:
            raise DomainError("gamma must lie in [0, 1)")
        self.P = [p if isinstance(p, BlockColumns) else np.asarray(p, dtype=float) for p in P]
        self.r = np.atleast_2d(np.asarray(r, dtype=float))
        self.gamma = float(gamma)
        self.num_actions = len(self.P)
        if self.num_actions == 0:
            raise DomainError("MDP needs at least one action")
        n = self.P[0].shape[0]
        self.num_states = n
        if self.r.shape != (self.num_actions, n):
            raise DomainError(f"rewards shape {self.r.shape} != {(self.num_actions, n)}")
        self.term = None if term is None else np.asarray(term, dtype=float).reshape(self.num_actions, n)
        for a, p in enumerate(self.P):
            if p.shape != (n, n):
                raise DomainError(f"P[{a}] has shape {p.shape}, expected {(n, n)}")
            nonneg = p.nonnegative() if isinstance(p, BlockColumns) else bool(np.all(p >= 0))
            if not nonneg:
                raise DomainError(f"P[{a}] has negative entries")
            sums = _row_sums(p) + (0.0 if self.term is None else self.term[a])
            if np.any(np.abs(sums - 1.0) > tol):
                raise DomainError(f"P[{a}] is not row-stochastic (max deviation {np.max(np.abs(sums - 1)):.3g})")

    @property
    def actions(self) -> int:
        return self.num_actions

    def matvec(self, a: int, v: np.ndarray) -> np.ndarray:
        return self.P[a] @ v

    def rows_matvec(self, a: int, rows: np.ndarray, v: np.ndarray) -> np.ndarray:
        p = self.P[a]
        if isinstance(p, BlockColumns):
            return p.rows_matmul(rows, v)
        return p[rows] @ v


@dataclass
class ValueFunction:
    v: np.ndarray
    Q: np.ndarray | None = None
    iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        if self.Q is not None:
            self.Q = np.asarray(self.Q, dtype=float)
            if not np.allclose(self.v, self.Q.max(axis=1), rtol=0, atol=1e-9):
                raise DomainError("v must equal the row maxima of Q")


@dataclass(frozen=True)
class Policy:
    actions: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise DomainError("epsilon must lie in [0, 1]")
        if np.any(np.asarray(self.actions) < 0):
            raise DomainError("negative action index")

    def __len__(self) -> int:
        return len(self.actions)


def apply_gamma_operator(Q) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.size == 0:
        raise DomainError("empty Q")
    return Q.max(axis=1)


def greedy_policy(Q) -> Policy:
    """Row-wise argmax; ``np.argmax`` already returns the lowest tied index."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.size == 0:
        raise DomainError("empty Q")
    if not np.all(np.isfinite(Q)):
        raise DomainError("Q has non-finite entries")
    return Policy(np.argmax(Q, axis=1))
