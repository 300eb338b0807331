import numpy as np
import pytest


def low_rank(rng, N, T, r, scale=1.0):
    return scale * rng.standard_normal((N, r)) @ rng.standard_normal((r, T))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def noisy_instance():
    """N=40, T=30, N1=T1=20, rank 2, Gaussian noise sd 0.1."""
    g = np.random.default_rng(7)
    M = low_rank(g, 40, 30, 2)
    Y = M + 0.1 * g.standard_normal(M.shape)
    return Y, M, 20, 20, 2


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
