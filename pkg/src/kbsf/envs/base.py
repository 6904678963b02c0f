"""Common environment interface."""

from __future__ import annotations

import numpy as np

from ..core import DomainError


class Environment:
    """Episodic simulator.

    ``step`` returns ``(state, reward, terminal)``. ``terminal`` is also set when
    the episode hits its step cap; ``absorbing`` tells whether the last terminal
    step really ended the task (goal or failure) rather than being cut off.
    Subclasses implement ``batch_step`` on arrays of states.
    """

    num_actions: int
    dim: int
    gamma: float
    max_steps: int
    # whether reaching an absorbing state counts as success (goal) or failure (fall)
    absorbing_is_success: bool = False

    def __init__(self, seed: int | None = None):
        self.rng = np.random.default_rng(seed)
        self.state: np.ndarray | None = None
        self.steps = 0
        self.done = True
        self.absorbing = False

    def sample_starts(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """``k`` initial states from the exploration start distribution."""
        raise NotImplementedError

    def sample_start(self) -> np.ndarray:
        return self.sample_starts(1, self.rng)[0]

    def batch_step(self, S: np.ndarray, A: np.ndarray, rng: np.random.Generator):
        """Vectorised dynamics: returns next states, rewards and an absorbing mask."""
        raise NotImplementedError

    def reset(self, state=None) -> np.ndarray:
        s = self.sample_start() if state is None else np.asarray(state, dtype=float).reshape(self.dim)
        self.state = s.copy()
        self.steps = 0
        self.done = False
        self.absorbing = False
        return s.copy()

    def step(self, action: int):
        if self.done or self.state is None:
            raise DomainError("step after terminal state; call reset first")
        if not 0 <= int(action) < self.num_actions:
            raise DomainError(f"invalid action {action}")
        S, R, T = self.batch_step(self.state[None, :], np.array([int(action)]), self.rng)
        self.state = S[0]
        self.steps += 1
        self.absorbing = bool(T[0])
        self.done = self.absorbing or self.steps >= self.max_steps
        return self.state.copy(), float(R[0]), self.done
