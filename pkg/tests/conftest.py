from fractions import Fraction

import numpy as np
import pytest

from ucbqr.lp_actions import enumerate_actions, reorder_actions
from ucbqr.model import CompatibilityNetwork, PayoffModel

SMALL_LINES = [(0, 0), (0, 1), (1, 0), (1, 1)]

# conventional labels 1..6 of the small system's actions, by line set
SMALL_LABELS = [
    {(0, 0), (1, 1)},
    {(0, 0), (1, 0), (1, 1)},
    {(0, 0), (0, 1), (1, 1)},
    {(0, 0), (0, 1), (1, 0)},
    {(0, 1), (1, 0), (1, 1)},
    {(0, 1), (1, 0)},
]

BIG_LINES = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (1, 4), (2, 3), (2, 4),
             (3, 4), (4, 2), (4, 3), (4, 4)]
BIG_THETA = ["0.5", "0.2", "0.2", "0.2", "0", "0.1", "0.1", "0.8", "1", "0.3", "0.6", "0.7", "0.7"]


@pytest.fixture(scope="session")
def small_net():
    return CompatibilityNetwork([10, 10], [15, 12], SMALL_LINES)


@pytest.fixture(scope="session")
def small_theta(small_net):
    return PayoffModel(small_net, ["0.4", "0.1", "0.3", "0.01"])


@pytest.fixture(scope="session")
def small_actions(small_net):
    """The six actions in their conventional order."""
    return reorder_actions(enumerate_actions(small_net, Fraction(1, 2)), SMALL_LABELS)


@pytest.fixture(scope="session")
def big_net():
    return CompatibilityNetwork([10, 21, 48, 38, 86], [20, 16, 45, 66, 67], BIG_LINES)


@pytest.fixture(scope="session")
def big_actions(big_net):
    return enumerate_actions(big_net, Fraction(1, 20))


def random_network(rng: np.random.Generator, max_types=4, max_servers=4):
    """A random stable network with I, J >= 2 and more than I+J-1 lines."""
    while True:
        I = int(rng.integers(2, max_types + 1))
        J = int(rng.integers(2, max_servers + 1))
        mask = rng.random((I, J)) < 0.6
        for i in range(I):
            mask[i, rng.integers(J)] = True
        for j in range(J):
            mask[rng.integers(I), j] = True
        lines = [(i, j) for i in range(I) for j in range(J) if mask[i, j]]
        if len(lines) <= I + J - 1:
            continue
        lam = [int(v) for v in rng.integers(1, 20, I)]
        mu = [int(v) for v in rng.integers(5, 30, J)]
        net = CompatibilityNetwork(lam, mu, lines)
        from ucbqr.model import check_stability
        if check_stability(net)[0]:
            return net


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
