"""Incremental KBSF: chunked model updates, representative-state growth and the online loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .batch import RepresentativeSet, ReducedModel, rep_q_many, solve_reduced
from .core import DomainError, SampleSet, ValueFunction
from .dp import SolverConfig
from .kernels import KernelSpec, distances, log_kernel_matrix, log_mass


@dataclass(frozen=True)
class IncrementalConfig:
    t_m: int = 1000
    t_v: int = 1000
    epsilon_greedy: float = 1.0
    growth_threshold: float = 0.0
    max_batch_buffer: int = 1_000_000

    def __post_init__(self):
        if self.t_m < 1 or self.t_v < 1:
            raise DomainError("t_m and t_v must be >= 1")
        if not 0 <= self.epsilon_greedy <= 1:
            raise DomainError("epsilon must lie in [0, 1]")
        if self.max_batch_buffer < 1:
            raise DomainError("max_batch_buffer must be >= 1")


def empty_model(reps: RepresentativeSet, kernel: KernelSpec, gamma: float, num_actions: int) -> ReducedModel:
    """The starting point ``Pbar = 0, rbar = 0, w = 0``."""
    m = reps.m
    return ReducedModel(reps, kernel, gamma, np.zeros((num_actions, m, m)), np.zeros((num_actions, m)),
                        np.zeros((num_actions, m)), np.full((num_actions, m), -np.inf))


def update_model(model: ReducedModel, batch: SampleSet) -> ReducedModel:
    """Fold a batch into the model.

    With ``w1`` the mass already absorbed by a row and ``w2``, ``b``, ``e`` the
    batch's kernel mass, unnormalized transitions and rewards,
    ``p <- (b + p w1) / (w1 + w2)``, ``r <- (e + r w1) / (w1 + w2)`` and
    ``w <- w1 + w2``. Masses are kept as logarithms so that narrow kernels do not
    underflow; rows that stay without mass are left untouched.
    """
    if batch.num_actions != model.num_actions:
        raise DomainError("batch has a different number of actions")
    P, r, term, log_w = model.P.copy(), model.r.copy(), model.term.copy(), model.log_w.copy()
    reps = model.reps
    for a in range(batch.num_actions):
        if batch.counts[a] == 0:
            continue
        if batch.dim != reps.dim:
            raise DomainError("batch dimension differs from the representative states")
        L = log_kernel_matrix(model.kernel, reps.states, batch.starts[a])
        lw2 = log_mass(L)
        rows = np.isfinite(lw2)
        K = np.zeros_like(L)
        K[rows] = np.exp(L[rows] - lw2[rows, None])
        done = batch.terminal[a].astype(float)
        D = reps.weights(batch.ends[a])
        Pb = K @ (D * (1.0 - done)[:, None])
        rb = K @ batch.rewards[a]
        tb = K @ done
        tot = np.logaddexp(log_w[a], lw2)
        valid = np.isfinite(tot)
        old, new = np.ones(len(tot)), np.zeros(len(tot))
        old[valid] = np.exp(log_w[a][valid] - tot[valid])
        new[valid] = np.exp(lw2[valid] - tot[valid])
        P[a] = old[:, None] * P[a] + new[:, None] * Pb
        r[a] = old * r[a] + new * rb
        term[a] = old * term[a] + new * tb
        s = P[a].sum(axis=1) + term[a]
        ok = s > 0
        P[a][ok] /= s[ok, None]
        term[a][ok] /= s[ok]
        log_w[a] = tot
    return replace(model, P=P, r=r, term=term, log_w=log_w, meta=dict(model.meta))


def add_representative_state(model: ReducedModel, s_new) -> ReducedModel:
    """Append a representative with zeroed row and column, zero reward and zero mass."""
    reps = model.reps.added(np.asarray(s_new, dtype=float))
    A, m = model.num_actions, model.m
    P = np.zeros((A, m + 1, m + 1))
    P[:, :m, :m] = model.P
    pad = lambda x, v: np.concatenate([x, np.full((A, 1), v)], axis=1)  # noqa: E731
    qbar = None if model.qbar is None else np.vstack([model.qbar, np.zeros((1, A))])
    return replace(model, reps=reps, P=P, r=pad(model.r, 0.0), term=pad(model.term, 0.0),
                   log_w=pad(model.log_w, -np.inf), qbar=qbar, meta=dict(model.meta))


def ikbsf_q(model: ReducedModel, s, a: int) -> float:
    if model.qbar is None:
        return 0.0
    return float(rep_q_many(model, s)[0, a])


def grow_representatives(model: ReducedModel, states: np.ndarray, threshold: float) -> ReducedModel:
    """Add each state whose raw kernel value to every representative is below ``threshold``."""
    if threshold <= 0:
        return model
    k = model.reps.kernel
    for s in np.atleast_2d(states):
        d = distances(k, s[None, :], model.reps.states).min()
        if float(k.phi_value(d / k.tau)) < threshold:
            model = add_representative_state(model, s)
    return model


def refresh_qbar(model: ReducedModel, solver: SolverConfig) -> ValueFunction:
    warm = None
    if model.qbar is not None:
        q = model.qbar
        warm = ValueFunction(q.max(axis=1), q)
    return solve_reduced(model, replace(solver, warm_start=warm))


class TransitionBuffer:
    """Per-action transition buffer with a peak-occupancy counter."""

    def __init__(self, num_actions: int, dim: int):
        self.num_actions, self.dim = num_actions, dim
        self.items: list[tuple] = []
        self.peak = 0

    def add(self, s, a, r, s2, terminal) -> None:
        self.items.append((s, a, r, s2, terminal))
        self.peak = max(self.peak, len(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def ends(self) -> np.ndarray:
        return np.array([it[3] for it in self.items]).reshape(len(self.items), self.dim)

    def to_samples(self) -> SampleSet:
        acts = np.array([it[1] for it in self.items], dtype=int)
        S = np.array([it[0] for it in self.items]).reshape(len(self.items), self.dim)
        R = np.array([it[2] for it in self.items], dtype=float)
        E = self.ends()
        T = np.array([it[4] for it in self.items], dtype=bool)
        return SampleSet([S[acts == a] for a in range(self.num_actions)], [R[acts == a] for a in range(self.num_actions)],
                         [E[acts == a] for a in range(self.num_actions)], [T[acts == a] for a in range(self.num_actions)])

    def clear(self) -> None:
        self.items = []


LOG_FIELDS = ["step", "episode", "reward", "action", "m", "model_update", "value_update", "seconds"]


@dataclass
class EpisodeLog:
    rows: list[tuple] = field(default_factory=list)
    peak_buffer: int = 0
    peak_model_bytes: int = 0
    m_history: list[tuple[int, int]] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            w.writerows(self.rows)


def epsilon_greedy(epsilon: float, num_actions: int) -> Callable:
    """Random action with probability epsilon (or before any Q exists), else the lowest-index argmax."""

    def choose(t: int, q: np.ndarray | None, rng: np.random.Generator) -> int:
        if q is None or rng.random() < epsilon:
            return int(rng.integers(num_actions))
        return int(np.argmax(q))

    return choose


def run_ikbsf(env, reps_initial: RepresentativeSet, kernel: KernelSpec, config: IncrementalConfig, total_steps: int,
              rng: np.random.Generator | None = None, solver: SolverConfig = SolverConfig(),
              policy: Callable | None = None, log_rows: bool = True, log_path: str | Path | None = None,
              on_value_update: Callable | None = None) -> tuple[ReducedModel, EpisodeLog]:
    """Observe/act loop of incremental KBSF.

    ``policy(t, q, rng)`` picks the action from the current ``Qtilde(s, .)``
    (``None`` before the first value update); the default is epsilon-greedy with
    ``config.epsilon_greedy``. ``on_value_update(t, model)`` is called after
    every refresh of ``Qbar``. With ``log_path`` the per-step log streams to CSV
    instead of being kept in memory.
    """
    if total_steps < 1:
        raise DomainError("total_steps must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    if policy is None:
        policy = epsilon_greedy(config.epsilon_greedy, env.num_actions)
    sink = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        sink = csv.writer(fh)
        sink.writerow(LOG_FIELDS)
    model = empty_model(reps_initial, kernel, env.gamma, env.num_actions)
    buf = TransitionBuffer(env.num_actions, env.dim)
    log = EpisodeLog(m_history=[(0, model.m)])
    s = env.reset()
    episode = 0
    a = int(rng.integers(env.num_actions))
    for t in range(1, total_steps + 1):
        t0 = time.perf_counter()
        s2, r, terminal = env.step(a)
        executed = a
        buf.add(s, a, r, s2, terminal and env.absorbing)
        upd_m = upd_v = False
        if t % config.t_m == 0 or len(buf) >= config.max_batch_buffer:
            if config.growth_threshold > 0:
                model = grow_representatives(model, buf.ends(), config.growth_threshold)
            model = update_model(model, buf.to_samples())
            buf.clear()
            upd_m = True
            log.m_history.append((t, model.m))
        if t % config.t_v == 0:
            refresh_qbar(model, solver)
            upd_v = True
            if on_value_update is not None:
                on_value_update(t, model)
        log.peak_buffer = max(log.peak_buffer, buf.peak)
        log.peak_model_bytes = max(log.peak_model_bytes, model.memory_bytes())
        if terminal:
            s = env.reset()
        else:
            s = s2
        q = None if model.qbar is None else rep_q_many(model, s)[0]
        a = policy(t, q, rng)
        row = (t, episode, r, executed, model.m, int(upd_m), int(upd_v), time.perf_counter() - t0)
        if sink is not None:
            sink.writerow(row)
        elif log_rows:
            log.rows.append(row)
        if terminal:
            episode += 1
    if sink is not None:
        fh.close()
    return model, log
