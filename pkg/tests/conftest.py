import warnings

import numpy as np
import pytest

from mvdecon.invariant import solve_invariant
from mvdecon.potentials import builtin_model

ACCEPTANCE_LINES: list = []

# independent fixed-point oracle (tests/oracles/hermite_fixed_point.py)
HERMITE_PI0 = 0.426566424499443
HERMITE_VAR = 0.904300934430366


def record(criterion: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="session")
def hermite():
    return builtin_model("hermite")


@pytest.fixture(scope="session")
def zero_model():
    return builtin_model("zero_interaction")


@pytest.fixture(scope="session")
def hermite_pi(hermite):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_invariant(hermite)


@pytest.fixture(scope="session")
def hermite_pi_wide(hermite):
    return solve_invariant(hermite, (-12.0, 12.0, 6145))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
