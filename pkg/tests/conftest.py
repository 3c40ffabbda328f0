import numpy as np
import pytest

from sdbounds.kron import tp2_generator

#: Three-state birth-death generator used for the 27-state fixture.
Q3 = np.array([
    [-0.8147, 0.8147, 0.0],
    [0.4529, -0.5164, 0.0635],
    [0.0, 0.4567, -0.4567],
])


def random_tp2(X, rng, t=None):
    """TP2 matrix ``exp(Qt)`` of a random birth-death generator."""
    Q = np.zeros((X, X))
    up = rng.uniform(0.1, 1.5, X - 1)
    down = rng.uniform(0.1, 1.5, X - 1)
    Q[np.arange(X - 1), np.arange(1, X)] = up
    Q[np.arange(1, X), np.arange(X - 1)] = down
    Q -= np.diag(Q.sum(axis=1))
    return tp2_generator(Q, rng.uniform(0.3, 3.0) if t is None else t).entries


def random_belief(X, rng, alpha=1.0):
    return rng.dirichlet(np.full(X, alpha))


def random_stochastic(X, rng, Y=None):
    M = rng.random((X, Y or X)) + 1e-3
    return M / M.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# Acceptance summary: tests record "criterion N" lines here and the terminal
# summary prints them in order.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
