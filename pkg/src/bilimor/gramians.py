"""Gramian sets, time-limited Gramians, H2 norms, and H2 errors.

The reachability Gramian P solves A P + P A^T + sum N_k P N_k^T = -B B^T,
the observability Gramian Q its transposed analogue with C^T C, and a
(full, reduced) pair additionally carries the reduced and mixed Gramians
that enter the H2 error

    ||full - reduced||_H2^2 = tr(C P C^T) + tr(Ch Ph Ch^T) - 2 tr(C Pg Ch^T).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, ParameterError
from .lyapunov import solve_generalized_lyapunov, solve_generalized_sylvester
from .simulate import MatrixPath, integrate_matrix_ode
from .sysmodel import BilinearSystem

__all__ = [
    "GramianSet",
    "TimeLimitedGramian",
    "gramian_set",
    "time_limited_gramian",
    "h2_norm",
    "h2_error",
]

NEGATIVE_TRACE_TOL = 1e-10


@dataclass(frozen=True)
class GramianSet:
    """Reachability/observability Gramians with residual metadata.

    ``P_hat``/``Q_hat`` are the reduced-system Gramians and ``P_g`` (n x r) /
    ``Q_g`` (r x n) the mixed ones; all are None unless a reduced system was
    supplied.  ``residuals`` maps each stored matrix to the relative residual
    of its defining equation.
    """

    P: np.ndarray
    Q: np.ndarray
    P_hat: np.ndarray | None = None
    Q_hat: np.ndarray | None = None
    P_g: np.ndarray | None = None
    Q_g: np.ndarray | None = None
    gamma_used: float = 1.0
    residuals: dict = field(default_factory=dict)


def _bilinear_apply(Ns1, Ns2, X):
    Y = np.zeros_like(X)
    for M1, M2 in zip(Ns1, Ns2):
        Y += M1 @ X @ M2.T
    return Y


def _rel_residual(A1, A2, N1, N2, X, RHS) -> float:
    res = A1 @ X + X @ A2.T + _bilinear_apply(N1, N2, X) - RHS
    scale = np.linalg.norm(RHS) + np.linalg.norm(X) * np.linalg.norm(A1)
    return float(np.linalg.norm(res) / scale) if scale > 0 else 0.0


def gramian_set(full: BilinearSystem, reduced: BilinearSystem | None = None,
                gamma_used: float = 1.0) -> GramianSet:
    """Solve the Gramian equations for a system and, optionally, a reduced pair.

    Mean-square stability of the inputs is assumed; the solvers raise when a
    solution is indefinite or the iteration fails to converge.
    """
    full.require_valid()
    P = solve_generalized_lyapunov(full.A, full.N, full.B @ full.B.T, side="reach")
    Q = solve_generalized_lyapunov(full.A, full.N, full.C.T @ full.C, side="observe")
    residuals = {
        "P": _rel_residual(full.A, full.A, full.N, full.N, P, -full.B @ full.B.T),
        "Q": _rel_residual(full.A.T, full.A.T, [Nk.T for Nk in full.N],
                           [Nk.T for Nk in full.N], Q, -full.C.T @ full.C),
    }
    if reduced is None:
        return GramianSet(P=P, Q=Q, gamma_used=gamma_used, residuals=residuals)

    reduced.require_valid()
    if reduced.m != full.m or reduced.p != full.p:
        raise ParameterError("full and reduced systems must share input/output counts")
    Ph = solve_generalized_lyapunov(reduced.A, reduced.N, reduced.B @ reduced.B.T, side="reach")
    Qh = solve_generalized_lyapunov(reduced.A, reduced.N, reduced.C.T @ reduced.C, side="observe")
    Pg = solve_generalized_sylvester(
        full.A, reduced.A, full.N, reduced.N, -full.B @ reduced.B.T
    )
    NhT = [Nk.T for Nk in reduced.N]
    NT = [Nk.T for Nk in full.N]
    Qg = solve_generalized_sylvester(
        reduced.A.T, full.A.T, NhT, NT, -reduced.C.T @ full.C
    )
    residuals.update({
        "P_hat": _rel_residual(reduced.A, reduced.A, reduced.N, reduced.N,
                               Ph, -reduced.B @ reduced.B.T),
        "Q_hat": _rel_residual(reduced.A.T, reduced.A.T, NhT, NhT,
                               Qh, -reduced.C.T @ reduced.C),
        "P_g": _rel_residual(full.A, reduced.A, full.N, reduced.N,
                             Pg, -full.B @ reduced.B.T),
        "Q_g": _rel_residual(reduced.A.T, full.A.T, NhT, NT,
                             Qg, -reduced.C.T @ full.C),
    })
    return GramianSet(P=P, Q=Q, P_hat=Ph, Q_hat=Qh, P_g=Pg, Q_g=Qg,
                      gamma_used=gamma_used, residuals=residuals)


@dataclass(frozen=True)
class TimeLimitedGramian:
    """Finite-horizon reachability Gramians P_t on an increasing grid.

    P_t is the running integral of the comparison flow started from B B^T, so
    the path is nondecreasing in the semidefinite order and converges to the
    reachability Gramian under mean-square stability.
    """

    grid: np.ndarray
    gramians: np.ndarray   # (len(grid), n, n)
    zbar: np.ndarray       # flow snapshots on the same grid


def time_limited_gramian(sys: BilinearSystem, grid: np.ndarray,
                         step: float | None = None) -> TimeLimitedGramian:
    """Integrate the comparison flow from B B^T and accumulate its integral."""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 1 or abs(grid[0]) > 1e-12:
        raise ParameterError("grid must start at 0")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ParameterError("grid must be strictly increasing")
    Z0 = sys.B @ sys.B.T
    path, acc = integrate_matrix_ode(sys, Z0, grid, step=step, accumulate=True)
    return TimeLimitedGramian(grid=grid, gramians=acc.matrices, zbar=path.matrices)


def h2_norm(sys: BilinearSystem) -> float:
    """H2 norm sqrt(tr(C P C^T)) with P the reachability Gramian."""
    gs = gramian_set(sys)
    val = float(np.trace(sys.C @ gs.P @ sys.C.T))
    if val < -NEGATIVE_TRACE_TOL:
        raise ConsistencyError(f"negative squared H2 norm {val:.3e}")
    return float(np.sqrt(max(val, 0.0)))


def h2_error(full: BilinearSystem, reduced: BilinearSystem,
             gramians: GramianSet | None = None) -> float:
    """H2 distance between a system and a reduced model via the three-trace identity."""
    if gramians is None or gramians.P_hat is None:
        gramians = gramian_set(full, reduced)
    val = (
        float(np.trace(full.C @ gramians.P @ full.C.T))
        + float(np.trace(reduced.C @ gramians.P_hat @ reduced.C.T))
        - 2.0 * float(np.trace(full.C @ gramians.P_g @ reduced.C.T))
    )
    if val < -NEGATIVE_TRACE_TOL:
        raise ConsistencyError(
            f"squared H2 error {val:.3e} is negative beyond roundoff; "
            "a Gramian solve is inconsistent"
        )
    return float(np.sqrt(max(val, 0.0)))
