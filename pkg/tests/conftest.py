from __future__ import annotations

import numpy as np
import pytest

from kbsf.core import FiniteMDP, SampleSet


def random_mdp(rng: np.random.Generator, n: int, A: int, gamma: float) -> FiniteMDP:
    P = [rng.dirichlet(np.ones(n), size=n) for _ in range(A)]
    return FiniteMDP(P, rng.uniform(-1, 1, (A, n)), gamma)


def random_samples(rng: np.random.Generator, n: int, A: int = 2, dim: int = 2, terminal: bool = False) -> SampleSet:
    """Transitions with uniform starts and small random displacements; every action gets at least one."""
    acts = np.concatenate([np.arange(A), rng.integers(A, size=max(0, n - A))])
    S = rng.uniform(0, 1, (len(acts), dim))
    E = S + rng.normal(0, 0.1, S.shape)
    R = rng.uniform(-1, 1, len(acts))
    T = rng.random(len(acts)) < 0.1 if terminal else np.zeros(len(acts), bool)
    return SampleSet([S[acts == a] for a in range(A)], [R[acts == a] for a in range(A)],
                     [E[acts == a] for a in range(A)], [T[acts == a] for a in range(A)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def verdict(criterion: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
