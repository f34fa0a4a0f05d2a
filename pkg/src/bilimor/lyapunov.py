"""Generalized Lyapunov and Sylvester solvers plus spectral stability tests.

The generalized reachability equation is

    A P + P A^T + sum_k N_k P N_k^T = -B B^T,

whose vectorization has system matrix L = I (x) A + A (x) I + sum_k N_k (x) N_k.
Mean-square stability means all eigenvalues of L lie in the open left half
plane.  Small problems are solved and analyzed densely in the vectorized
form; larger ones use a Lyapunov-preconditioned Krylov iteration and a
positive-operator power iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import ConsistencyError, ParameterError, SingularityError, StabilityError
from .sysmodel import BilinearSystem

__all__ = [
    "StabilityReport",
    "kron_stability",
    "stability_rescale_threshold",
    "solve_generalized_lyapunov",
    "solve_generalized_sylvester",
]

DENSE_KRON_UNKNOWNS = 4096   # largest n1*n2 solved by direct vectorized LU
DENSE_SPECTRUM_ORDER = 40    # largest n analyzed by dense eigenvalues of L
EIG_SIZE_CAP = 1500          # guard for the dense eigensolver on A itself
RESIDUAL_RTOL = 1e-10
PSD_EIG_RTOL = 1e-10


@dataclass(frozen=True)
class StabilityReport:
    """Spectral stability summary of a bilinear system.

    ``kron_abscissa`` is the largest real part of the vectorized operator L;
    mean-square stability is equivalent to it being negative.
    ``sufficient_margin`` is the spectral norm of the solution X of
    A X + X A^T = -sum_k N_k N_k^T; a value below one is a sufficient
    certificate for mean-square stability when A is Hurwitz.  ``method``
    records whether L was analyzed densely or iteratively.
    """

    hurwitz: bool
    spectral_abscissa_A: float
    kron_abscissa: float
    sufficient_margin: float
    mean_square_stable: bool
    method: str


def _kron_operator(A1: np.ndarray, A2: np.ndarray,
                   N1: Sequence[np.ndarray], N2: Sequence[np.ndarray]) -> np.ndarray:
    """Dense matrix of X -> A1 X + X A2^T + sum N1_k X N2_k^T in column-major vec."""
    n1, n2 = A1.shape[0], A2.shape[0]
    L = np.kron(np.eye(n2), A1) + np.kron(A2, np.eye(n1))
    for M1, M2 in zip(N1, N2):
        L = L + np.kron(M2, M1)
    return L


def _apply_bilinear(N1: Sequence[np.ndarray], N2: Sequence[np.ndarray], X: np.ndarray) -> np.ndarray:
    Y = np.zeros_like(X)
    for M1, M2 in zip(N1, N2):
        Y += M1 @ X @ M2.T
    return Y


def _neg_lyap_inv_apply(A: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Solve A Z + Z A^T = -Y; maps the PSD cone into itself for Hurwitz A."""
    Z = scipy.linalg.solve_continuous_lyapunov(A, -Y)
    return 0.5 * (Z + Z.T)


def _positive_spectral_radius(A: np.ndarray, N: Sequence[np.ndarray],
                              shift: float = 0.0, maxit: int = 300, tol: float = 1e-9) -> float:
    """Power iteration for rho((shift*I - L_A)^{-1} Pi) on the PSD cone.

    L_A X = A X + X A^T and Pi X = sum_k N_k X N_k^T.  Requires
    shift > 2 * abscissa(A).  The iteration starts from Pi(I), which lies in
    the cone spanned by the dominant (Perron) eigenmatrix.
    """
    A_sh = A - 0.5 * shift * np.eye(A.shape[0])
    X = _apply_bilinear(N, N, np.eye(A.shape[0]))
    nx = float(np.linalg.norm(X))
    if nx == 0.0:
        return 0.0
    X = X / nx
    rho = 0.0
    for _ in range(maxit):
        Z = _neg_lyap_inv_apply(A_sh, _apply_bilinear(N, N, X))
        r = float(np.linalg.norm(Z))
        if r == 0.0:
            return 0.0
        X = Z / r
        if abs(r - rho) <= tol * max(1.0, r):
            return r
        rho = r
    return rho


def _iterative_kron_abscissa(A: np.ndarray, N: Sequence[np.ndarray]) -> float:
    """Largest real part of L via bisection on the shifted spectral radius.

    For theta above 2*abscissa(A) the operator (theta I - L_A)^{-1} Pi is
    positive, and L - theta I is stable exactly when its spectral radius is
    below one.  The crossing point is the abscissa of L.
    """
    absc2 = 2.0 * float(np.linalg.eigvals(A).real.max())
    if all(np.linalg.norm(Nk) == 0.0 for Nk in N):
        return absc2
    span = max(1e-6, sum(np.linalg.norm(Nk, 2) ** 2 for Nk in N))
    lo = absc2 + 1e-9 * max(1.0, abs(absc2))
    hi = absc2 + span
    # rho decreases in theta; ensure the bracket straddles rho = 1
    while _positive_spectral_radius(A, N, shift=hi) >= 1.0:
        hi = absc2 + 2.0 * (hi - absc2)
        if hi - absc2 > 1e6 * span:
            raise ConsistencyError("kron abscissa bisection failed to bracket")
    if _positive_spectral_radius(A, N, shift=lo) < 1.0:
        return lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _positive_spectral_radius(A, N, shift=mid) < 1.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-6 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def kron_stability(sys: BilinearSystem) -> StabilityReport:
    """Stability report: Hurwitz test, mean-square test, sufficient margin."""
    sys.require_valid()
    n = sys.n
    if n > EIG_SIZE_CAP:
        raise ParameterError(
            f"system order {n} exceeds the dense eigensolver cap {EIG_SIZE_CAP}"
        )
    abscissa = float(np.linalg.eigvals(sys.A).real.max())
    hurwitz = abscissa < 0.0
    if hurwitz:
        NNt = sum(Nk @ Nk.T for Nk in sys.N)
        X = scipy.linalg.solve_continuous_lyapunov(sys.A, -np.asarray(NNt, dtype=float))
        margin = float(np.linalg.norm(0.5 * (X + X.T), 2))
    else:
        margin = float("nan")
    if n <= DENSE_SPECTRUM_ORDER:
        L = _kron_operator(sys.A, sys.A, sys.N, sys.N)
        kron_abscissa = float(np.linalg.eigvals(L).real.max())
        method = "dense"
    else:
        if not hurwitz:
            # L's abscissa is at least twice A's, so the sign is already known
            kron_abscissa = 2.0 * abscissa
            method = "iterative"
        else:
            kron_abscissa = _iterative_kron_abscissa(sys.A, sys.N)
            method = "iterative"
    return StabilityReport(
        hurwitz=hurwitz,
        spectral_abscissa_A=abscissa,
        kron_abscissa=kron_abscissa,
        sufficient_margin=margin,
        mean_square_stable=kron_abscissa < 0.0,
        method=method,
    )


def stability_rescale_threshold(sys: BilinearSystem) -> float:
    """Smallest input-scaling gamma at which the scaled system turns mean-square stable.

    Equals sqrt(rho(-L_A^{-1} Pi)): scaling divides the bilinear couplings by
    gamma, hence the spectral radius by gamma^2.  Requires A Hurwitz.  This is
    the exact crossover; the quadrature-based sufficient threshold of
    :func:`bilimor.sysmodel.gamma_threshold` is in general larger.
    """
    sys.require_valid()
    abscissa = float(np.linalg.eigvals(sys.A).real.max())
    if abscissa >= 0:
        raise StabilityError(f"A is not Hurwitz (spectral abscissa {abscissa:.3e})")
    rho = _positive_spectral_radius(sys.A, sys.N, shift=0.0, tol=1e-12)
    return float(np.sqrt(rho))


def _residual_scale(A1: np.ndarray, RHS: np.ndarray, X: np.ndarray) -> float:
    return float(np.linalg.norm(RHS) + np.linalg.norm(X) * np.linalg.norm(A1))


def _solve_dense(A1, A2, N1, N2, RHS):
    L = _kron_operator(A1, A2, N1, N2)
    try:
        v = np.linalg.solve(L, RHS.flatten(order="F"))
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"vectorized operator is singular: {exc}") from exc
    return v.reshape(RHS.shape, order="F")


def _solve_iterative(A1, A2, N1, N2, RHS):
    """Krylov solve of (I + L_0^{-1} Pi) X = L_0^{-1} RHS with L_0 X = A1 X + X A2^T.

    A Lyapunov/Sylvester solve preconditions every matrix-vector product, so
    convergence is governed by the spectral radius of L_0^{-1} Pi, which is
    below one for mean-square stable problems.
    """
    n1, n2 = A1.shape[0], A2.shape[0]

    def l0_solve(Y: np.ndarray) -> np.ndarray:
        return scipy.linalg.solve_sylvester(A1, A2.T, Y)

    try:
        G = l0_solve(RHS)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularityError(f"Sylvester preconditioner failed: {exc}") from exc

    def matvec(v: np.ndarray) -> np.ndarray:
        X = v.reshape((n1, n2), order="F")
        Y = _apply_bilinear(N1, N2, X)
        return v + l0_solve(Y).flatten(order="F")

    op = scipy.sparse.linalg.LinearOperator((n1 * n2, n1 * n2), matvec=matvec)
    v, info = scipy.sparse.linalg.gmres(
        op, G.flatten(order="F"), rtol=1e-13, atol=0.0, restart=80, maxiter=800
    )
    if info != 0:
        raise StabilityError(
            "iterative generalized solve did not converge; the operator is "
            "likely mean-square unstable or nearly singular"
        )
    return v.reshape((n1, n2), order="F")


def solve_generalized_sylvester(
    A1: np.ndarray,
    A2: np.ndarray,
    N1list: Sequence[np.ndarray],
    N2list: Sequence[np.ndarray],
    RHS: np.ndarray,
) -> np.ndarray:
    """Solve A1 X + X A2^T + sum_k N1_k X N2_k^T = RHS (sign as given).

    Dense vectorized LU up to DENSE_KRON_UNKNOWNS unknowns, Krylov iteration
    with a Sylvester preconditioner above.  The residual is verified against
    RESIDUAL_RTOL relative to ||RHS||_F + ||X||_F * ||A1||_F.
    """
    A1 = np.atleast_2d(np.asarray(A1))
    A2 = np.atleast_2d(np.asarray(A2))
    RHS = np.atleast_2d(np.asarray(RHS))
    N1 = [np.atleast_2d(np.asarray(Nk)) for Nk in N1list]
    N2 = [np.atleast_2d(np.asarray(Nk)) for Nk in N2list]
    n1, n2 = A1.shape[0], A2.shape[0]
    if RHS.shape != (n1, n2):
        raise ParameterError(f"RHS must be {n1}x{n2}, got {RHS.shape}")
    if len(N1) != len(N2):
        raise ParameterError("N1list and N2list must have equal length")
    if n1 * n2 <= DENSE_KRON_UNKNOWNS or np.iscomplexobj(A1) or np.iscomplexobj(A2):
        X = _solve_dense(A1, A2, N1, N2, RHS)
    else:
        X = _solve_iterative(A1, A2, N1, N2, RHS)
    res = A1 @ X + X @ A2.T + _apply_bilinear(N1, N2, X) - RHS
    rel = float(np.linalg.norm(res))
    scale = _residual_scale(A1, RHS, X)
    if scale > 0 and rel > RESIDUAL_RTOL * scale:
        raise SingularityError(
            f"generalized Sylvester residual {rel:.3e} exceeds "
            f"{RESIDUAL_RTOL:.0e} * {scale:.3e}; operator is ill conditioned"
        )
    return X


def solve_generalized_lyapunov(
    A: np.ndarray,
    Nlist: Sequence[np.ndarray],
    RHS: np.ndarray,
    side: str = "reach",
) -> np.ndarray:
    """Solve the generalized Lyapunov equation with PSD right-hand side RHS.

    side="reach":    A P + P A^T + sum N_k P N_k^T   = -RHS
    side="observe":  A^T Q + Q A + sum N_k^T Q N_k   = -RHS

    The result is symmetrized and must be positive semidefinite up to a
    relative eigenvalue tolerance of PSD_EIG_RTOL; an indefinite solution
    signals a mean-square unstable operator and raises.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    RHS = np.atleast_2d(np.asarray(RHS, dtype=float))
    if side not in ("reach", "observe"):
        raise ParameterError(f"side must be 'reach' or 'observe', got {side!r}")
    if np.linalg.norm(RHS - RHS.T) > 1e-10 * max(1.0, np.linalg.norm(RHS)):
        raise ParameterError("RHS must be symmetric")
    N = [np.atleast_2d(np.asarray(Nk, dtype=float)) for Nk in Nlist]
    if side == "observe":
        A = A.T
        N = [Nk.T for Nk in N]
    P = solve_generalized_sylvester(A, A, N, N, -RHS)
    P = 0.5 * (P + P.T)
    eigs = np.linalg.eigvalsh(P)
    top = float(eigs.max())
    # absolute slack keeps the zero right-hand side from tripping the test
    tol = PSD_EIG_RTOL * max(top, 0.0) + 1e-14 * float(np.linalg.norm(RHS))
    if eigs.min() < -tol:
        raise StabilityError(
            f"solution is indefinite (min eig {eigs.min():.3e}, max {top:.3e}); "
            "the operator is not mean-square stable"
        )
    return P
