import numpy as np
import pytest

from rrlqr.estimation import Dataset, spectral_model
from rrlqr.simulation import CostSpec, LinearSystem, Policy, make_rng, rollout

A5 = np.array([[1.1, 0.5, 0.0], [0.0, 0.9, 0.1], [0.0, -0.2, 0.8]])
B5 = np.array([[0.0, 1.0], [0.1, 0.0], [0.0, 2.0]])
SIGMA5 = 0.5


@pytest.fixture
def sys5():
    return LinearSystem(A5, B5, SIGMA5)


@pytest.fixture
def cost5():
    return CostSpec(np.eye(3), np.diag([0.1, 1.0]))


def excitation_data(sys, rollouts=500, length=6, seed=0):
    rng = make_rng(seed)
    excite = Policy(np.zeros((sys.n_u, sys.n_x)), np.eye(sys.n_u))
    return Dataset.from_trajectories(
        [rollout(sys, excite, np.zeros(sys.n_x), length, r) for r in rng.spawn(rollouts)]
    )


@pytest.fixture(scope="session")
def model5():
    sys = LinearSystem(A5, B5, SIGMA5)
    return spectral_model(excitation_data(sys), SIGMA5, 0.05)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(key: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0].rstrip("i()"))):
            terminalreporter.write_line(line)
