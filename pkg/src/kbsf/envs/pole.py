"""Cart with one, two or three hinged poles, integrated with fourth-order Runge-Kutta.

State layout: ``[x, x_dot, theta_1, theta_1_dot, ..., theta_k, theta_k_dot]``
(metres, radians). Pole lengths below are half-lengths.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..core import DomainError
from .base import Environment

G = 9.8
DEG = np.pi / 180.0

# cart 1 kg; long pole 1 m / 0.1 kg; short pole a tenth of that; the third pole copies the long one
CONSTANTS_VERSION = "multipole/1"
HALF_LENGTHS = {1: (0.5,), 2: (0.5, 0.05), 3: (0.5, 0.05, 0.5)}
MASSES = {1: (0.1,), 2: (0.1, 0.01), 3: (0.1, 0.01, 0.1)}
GRID_HALF_RANGES = {
    1: (1.2, 0.24, 18 * DEG, 75 * DEG),
    2: (1.2, 0.24, 18 * DEG, 75 * DEG, 18 * DEG, 150 * DEG),
    3: (1.2, 0.24, 18 * DEG, 75 * DEG, 18 * DEG, 150 * DEG, 18 * DEG, 75 * DEG),
}


@dataclass(frozen=True)
class PoleBalanceConfig:
    num_poles: int = 1
    dt: float = 0.01
    substeps: int = 2
    angle_limit: float = 36 * DEG
    track_limit: float = 2.4
    force: float = 10.0
    gamma: float = 0.99
    max_steps: int = 3000
    cart_mass: float = 1.0
    half_lengths: tuple = field(default=None)
    masses: tuple = field(default=None)
    mu_cart: float = 0.0005
    mu_pole: float = 0.000002
    # exploration starts are uniform over the test box scaled by this factor
    start_scale: float = 1.0
    # explicit half-widths of the start box; overrides start_scale when set
    start_box: tuple | None = None

    def __post_init__(self):
        if self.num_poles not in (1, 2, 3):
            raise DomainError("num_poles must be 1, 2 or 3")
        if self.half_lengths is None:
            object.__setattr__(self, "half_lengths", HALF_LENGTHS[self.num_poles])
        if self.masses is None:
            object.__setattr__(self, "masses", MASSES[self.num_poles])
        if self.start_box is not None:
            box = tuple(float(x) for x in self.start_box)
            if len(box) != self.dim or any(x < 0 for x in box):
                raise DomainError("start_box needs one nonnegative half-width per state variable")
            object.__setattr__(self, "start_box", box)

    @property
    def dim(self) -> int:
        return 2 + 2 * self.num_poles


def derivatives(S: np.ndarray, F: np.ndarray, cfg: PoleBalanceConfig) -> np.ndarray:
    l = np.asarray(cfg.half_lengths)
    m = np.asarray(cfg.masses)
    xd = S[:, 1]
    th = S[:, 2::2]
    om = S[:, 3::2]
    s, c = np.sin(th), np.cos(th)
    fric = cfg.mu_pole * om / (m * l)
    f_eff = m * l * om ** 2 * s + 0.75 * m * c * (fric - G * s)
    m_eff = m * (1.0 - 0.75 * c ** 2)
    xdd = (F - cfg.mu_cart * np.sign(xd) + f_eff.sum(axis=1)) / (cfg.cart_mass + m_eff.sum(axis=1))
    thdd = -0.75 / l * (xdd[:, None] * c - G * s + fric)
    out = np.empty_like(S)
    out[:, 0] = xd
    out[:, 1] = xdd
    out[:, 2::2] = om
    out[:, 3::2] = thdd
    return out


def rk4(S: np.ndarray, F: np.ndarray, dt: float, cfg: PoleBalanceConfig) -> np.ndarray:
    k1 = derivatives(S, F, cfg)
    k2 = derivatives(S + 0.5 * dt * k1, F, cfg)
    k3 = derivatives(S + 0.5 * dt * k2, F, cfg)
    k4 = derivatives(S + dt * k3, F, cfg)
    return S + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def failed(S: np.ndarray, cfg: PoleBalanceConfig) -> np.ndarray:
    S = np.atleast_2d(S)
    bad = ~np.all(np.isfinite(S), axis=1)
    with np.errstate(invalid="ignore"):
        bad |= np.abs(S[:, 0]) > cfg.track_limit
        bad |= np.any(np.abs(S[:, 2::2]) > cfg.angle_limit, axis=1)
    return bad


def pole_dynamics(S, A, cfg: PoleBalanceConfig):
    """Two RK4 sub-steps under force ``-F`` (action 0) or ``+F`` (action 1)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    F = np.where(np.asarray(A) == 1, cfg.force, -cfg.force).astype(float)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.substeps):
            S = rk4(S, F, cfg.dt, cfg)
    fail = failed(S, cfg)
    return S, np.where(fail, -1.0, 0.0), fail


def energy(S, cfg: PoleBalanceConfig) -> np.ndarray:
    """Mechanical energy of cart and poles (potential measured from the pivot height)."""
    S = np.atleast_2d(S)
    l = np.asarray(cfg.half_lengths)
    m = np.asarray(cfg.masses)
    xd, th, om = S[:, 1], S[:, 2::2], S[:, 3::2]
    kin = 0.5 * (cfg.cart_mass + m.sum()) * xd ** 2 + np.sum(m * l * xd[:, None] * om * np.cos(th) + (2.0 / 3.0) * m * l ** 2 * om ** 2, axis=1)
    pot = np.sum(m * G * l * np.cos(th), axis=1)
    return kin + pot


def test_state_grid(task: str) -> np.ndarray:
    """Evaluation grids: 81 single-pole, 81 double-pole and 256 triple-pole states, 13 puddle states."""
    if task == "puddle":
        from .puddle import puddle_test_states

        return puddle_test_states()
    if task == "single_pole":
        h = GRID_HALF_RANGES[1]
        return np.array(list(itertools.product(*[np.linspace(-x, x, 3) for x in h])))
    if task == "double_pole":
        # cart at rest; 3 levels of both poles' angles and angular velocities
        h = GRID_HALF_RANGES[2][2:]
        pts = np.array(list(itertools.product(*[np.linspace(-x, x, 3) for x in h])))
        return np.hstack([np.zeros((len(pts), 2)), pts])
    if task == "triple_pole":
        h = GRID_HALF_RANGES[3]
        return np.array(list(itertools.product(*[(-x, x) for x in h])))
    raise DomainError(f"unknown task {task!r}")


class PoleBalance(Environment):
    num_actions = 2

    def __init__(self, config: PoleBalanceConfig = PoleBalanceConfig(), seed: int | None = None):
        super().__init__(seed)
        self.config = config
        self.dim = config.dim
        self.gamma = config.gamma
        self.max_steps = config.max_steps
        self.half_ranges = np.array(GRID_HALF_RANGES[config.num_poles])
        self.bounds = [(-2 * h, 2 * h) for h in self.half_ranges]

    def sample_starts(self, k, rng):
        box = self.config.start_box
        h = np.asarray(box) if box is not None else self.config.start_scale * self.half_ranges
        return rng.uniform(-h, h, (k, self.dim))

    def batch_step(self, S, A, rng):
        return pole_dynamics(S, A, self.config)

    def test_states(self) -> np.ndarray:
        return test_state_grid({1: "single_pole", 2: "double_pole", 3: "triple_pole"}[self.config.num_poles])


def pole_step(state, action: int, cfg: PoleBalanceConfig = PoleBalanceConfig()):
    if int(action) not in (0, 1):
        raise DomainError(f"invalid action {action}")
    S, R, T = pole_dynamics(np.asarray(state, dtype=float)[None, :], np.array([int(action)]), cfg)
    return S[0], float(R[0]), bool(T[0])
