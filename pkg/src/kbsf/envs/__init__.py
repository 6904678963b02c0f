from ..core import DomainError
from .base import Environment
from .pole import PoleBalance, PoleBalanceConfig, pole_step, test_state_grid
from .puddle import PuddleWorld, PuddleWorldConfig, puddle_step, puddle_test_states


TASKS = ("puddle", "single_pole", "double_pole", "triple_pole")


def make_env(task: str, seed: int | None = None, overrides: dict | None = None) -> Environment:
    """Build a task's environment; ``overrides`` replaces fields of its config."""
    overrides = dict(overrides or {})
    if task == "puddle":
        return PuddleWorld(PuddleWorldConfig(**overrides), seed=seed)
    poles = {"single_pole": 1, "double_pole": 2, "triple_pole": 3}
    if task in poles:
        return PoleBalance(PoleBalanceConfig(num_poles=poles[task], **overrides), seed=seed)
    raise DomainError(f"unknown task {task!r}")


__all__ = [
    "Environment",
    "PoleBalance",
    "PoleBalanceConfig",
    "PuddleWorld",
    "PuddleWorldConfig",
    "TASKS",
    "make_env",
    "pole_step",
    "puddle_step",
    "puddle_test_states",
    "test_state_grid",
]
