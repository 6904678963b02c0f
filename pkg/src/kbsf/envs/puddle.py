"""Puddle world: reach the top-right corner of the unit square while avoiding two puddles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DomainError
from .base import Environment

# up, down, left, right
MOVES = np.array([[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]])


@dataclass(frozen=True)
class PuddleWorldConfig:
    gamma: float = 0.99
    goal_reward: float = 5.0
    puddle_penalty: float = 10.0
    step_size: float = 0.05
    noise: float = 0.01
    max_steps: int = 300
    radius: float = 0.1
    puddles: tuple = ((0.1, 0.75, 0.45, 0.75), (0.45, 0.4, 0.45, 0.8))
    goal_sum: float = 1.9


def segment_distance(P: np.ndarray, seg) -> np.ndarray:
    a = np.array(seg[:2])
    b = np.array(seg[2:])
    ab = b - a
    t = np.clip(((P - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(P - (a + t[:, None] * ab), axis=1)


def puddle_depth(P, cfg: PuddleWorldConfig = PuddleWorldConfig()) -> np.ndarray:
    """Summed distance from inside each puddle to its nearest edge (zero outside)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return sum(np.maximum(0.0, cfg.radius - segment_distance(P, seg)) for seg in cfg.puddles)


def in_goal(P, cfg: PuddleWorldConfig = PuddleWorldConfig()) -> np.ndarray:
    P = np.atleast_2d(P)
    return P[:, 0] + P[:, 1] >= cfg.goal_sum


def puddle_dynamics(S, A, rng: np.random.Generator, cfg: PuddleWorldConfig = PuddleWorldConfig()):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    nxt = np.clip(S + cfg.step_size * MOVES[np.asarray(A)] + rng.normal(0.0, cfg.noise, S.shape), 0.0, 1.0)
    goal = in_goal(nxt, cfg)
    reward = np.where(goal, cfg.goal_reward, -cfg.puddle_penalty * puddle_depth(nxt, cfg))
    return nxt, reward, goal


def puddle_test_states() -> np.ndarray:
    g = np.linspace(0.1, 0.3, 3)
    h = np.linspace(0.3, 0.5, 3)
    grid = [(x, y) for x in g for y in h]
    corner = [(x, y) for x in (0.1, 0.3) for y in (0.9, 1.0)]
    return np.array(grid + corner)


class PuddleWorld(Environment):
    num_actions = 4
    dim = 2
    absorbing_is_success = True

    def __init__(self, config: PuddleWorldConfig = PuddleWorldConfig(), seed: int | None = None):
        super().__init__(seed)
        self.config = config
        self.gamma = config.gamma
        self.max_steps = config.max_steps
        self.bounds = [(0.0, 1.0), (0.0, 1.0)]

    def sample_starts(self, k, rng):
        return rng.uniform(0.0, 1.0, (k, 2))

    def batch_step(self, S, A, rng):
        return puddle_dynamics(S, A, rng, self.config)

    def test_states(self) -> np.ndarray:
        return puddle_test_states()


def puddle_step(state, action: int, rng: np.random.Generator | None = None,
                cfg: PuddleWorldConfig = PuddleWorldConfig()):
    """Single transition; returns ``(state', reward, terminal)`` (terminal only at the goal)."""
    if not 0 <= int(action) < 4:
        raise DomainError(f"invalid action {action}")
    rng = rng if rng is not None else np.random.default_rng()
    S, R, G = puddle_dynamics(np.asarray(state, dtype=float)[None, :], np.array([int(action)]), rng, cfg)
    return S[0], float(R[0]), bool(G[0])
