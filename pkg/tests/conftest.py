import numpy as np
import pytest

from bilimor import BilinearSystem, toy_control, toy_system


@pytest.fixture
def toy():
    return toy_system()


@pytest.fixture
def toy_u():
    return toy_control(1.0)


@pytest.fixture
def scalar_linear():
    # x' = -x + u, y = x
    return BilinearSystem(A=[[-1.0]], B=[[1.0]], C=[[1.0]], N=(np.zeros((1, 1)),))


def kron_operator(A1, A2, N1s, N2s):
    """Independent assembly of the vectorized operator (column-major vec)."""
    n1, n2 = A1.shape[0], A2.shape[0]
    L = np.kron(np.eye(n2), A1) + np.kron(A2, np.eye(n1))
    for M1, M2 in zip(N1s, N2s):
        L = L + np.kron(M2, M1)
    return L


def kron_solve(A1, A2, N1s, N2s, RHS):
    """Oracle: direct dense solve of the vectorized equation."""
    L = kron_operator(A1, A2, N1s, N2s)
    v = np.linalg.solve(L, np.asarray(RHS, dtype=L.dtype).flatten(order="F"))
    return v.reshape(RHS.shape, order="F")
