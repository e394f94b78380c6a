import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kernpool import DiscreteDistribution, Panel  # noqa: E402


@pytest.fixture
def two_dirac_panel():
    """One case: model A predicts 0, model B predicts 2, the outcome is 1."""
    return Panel((np.array([[[0.0]]]), np.array([[[2.0]]])), np.array([[1.0]]), ("A", "B"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_panel(rng, J=3, M_max=4, n=10, d=1, bias=True):
    counts = rng.integers(1, M_max + 1, size=J)
    mu = rng.normal(size=(n, d))
    obs = mu + rng.normal(size=(n, d))
    members = []
    for j in range(J):
        b = rng.normal() if bias else 0.0
        s = rng.uniform(0.2, 2.0)
        members.append(mu[:, None, :] + b + s * rng.normal(size=(n, counts[j], d)))
    return Panel(tuple(members), obs, tuple(f"m{j}" for j in range(J)))


def random_distribution(rng, M=None, d=1, weighted=False):
    M = M or int(rng.integers(1, 8))
    atoms = rng.normal(size=(M, d)) * rng.uniform(0.5, 3)
    w = rng.dirichlet(np.ones(M)) if weighted else None
    return DiscreteDistribution(atoms, w)


_CRITERIA: dict = {}


@pytest.fixture
def record_criterion():
    """Print and remember one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _CRITERIA[number] = line
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
