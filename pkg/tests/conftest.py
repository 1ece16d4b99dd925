import numpy as np
import pytest

from a2bcd.problems import random_ridge_data, ridge_dual_oracle, synth_quadratic

#: lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


@pytest.fixture(scope="session")
def quad_small():
    return synth_quadratic(10, 3, 50.0, seed=3, equal_lipschitz=False)


@pytest.fixture(scope="session")
def ridge_small():
    A, labels = random_ridge_data(30, 60, density=0.2, seed=4)
    return ridge_dual_oracle(A, labels, 1e-2)


@pytest.fixture(scope="session")
def ridge_medium():
    A, labels = random_ridge_data(200, 500, density=0.1, seed=1)
    return ridge_dual_oracle(A, labels, 1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
