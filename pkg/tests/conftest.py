import sys

import numpy as np
import pytest

from homeopt.envelope import Oracle


def abs2_oracle():
    """f(y) = |y - 2| in one dimension, sign(0) = 0."""
    return Oracle(
        value=lambda y: abs(float(y[0]) - 2.0),
        subgradient=lambda y: np.array([float(np.sign(y[0] - 2.0))]),
        dimension=1,
        lower_bound=0.0,
    )


def half_square_oracle(n=1):
    return Oracle(
        value=lambda y: 0.5 * float(y @ y),
        subgradient=lambda y: np.array(y, dtype=float),
        dimension=n,
        lower_bound=0.0,
    )


def huber(x, gamma):
    """Closed-form envelope of |. - 2| for p = 2."""
    d = abs(x - 2.0)
    return d * d / (2 * gamma) if d <= gamma else d - gamma / 2


def soft_threshold(x, gamma):
    d = x - 2.0
    return 2.0 + np.sign(d) * max(abs(d) - gamma, 0.0)


@pytest.fixture
def abs2():
    return abs2_oracle()


@pytest.fixture
def half_square():
    return half_square_oracle


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
