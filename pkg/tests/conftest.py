import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Z = np.diag([1.0, -1.0])


def site_op(op, k, n):
    """``op`` on qubit ``k`` of ``n``; qubit k is bit k of the basis index."""
    return np.kron(np.kron(np.eye(2 ** (n - 1 - k)), op), np.eye(2 ** k))


def kron_hamiltonian(n, bonds, h, J, gamma):
    """Independent Kronecker-product construction of the bare patch Hamiltonian."""
    H = np.zeros((2 ** n, 2 ** n))
    for k in range(n):
        H -= h[k] * site_op(PAULI_Z, k, n) + gamma * site_op(PAULI_X, k, n)
    for (k, l), j in zip(bonds, J):
        H -= j * site_op(PAULI_Z, k, n) @ site_op(PAULI_Z, l, n)
    return H


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One summary line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = {}


def record_criterion(number, name, passed, detail=""):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
