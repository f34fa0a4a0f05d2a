"""Balancing, balanced truncation, singular perturbation, and bilinear IRKA.

Balancing factors P = K K^T and Q = L L^T, takes the SVD K^T L = V S U^T, and
uses the contragredient transformation

    T = S^{-1/2} U^T L^T,     T^{-1} = K V S^{-1/2},

after which both Gramians equal diag(hsv).  Truncation keeps the leading r
states; singular perturbation instead folds the discarded block through
-A22^{-1} A21.  Bilinear IRKA iterates projection matrices from a pair of
generalized Sylvester equations until the reduced spectrum stagnates, which
enforces the first-order H2 optimality conditions at a fixed point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConsistencyError,
    ParameterError,
    RankDeficiencyError,
    SingularityError,
)
from .gramians import GramianSet, gramian_set
from .lyapunov import kron_stability, solve_generalized_sylvester
from .sysmodel import BilinearSystem

__all__ = [
    "BalancingTransform",
    "ReductionResult",
    "balance",
    "apply_transform",
    "balanced_truncation",
    "singular_perturbation",
    "bilinear_irka",
    "optimality_residuals",
]

HSV_CLUSTER_RTOL = 1e-10
GRAMIAN_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class BalancingTransform:
    """State transformation S with S P S^T = S^{-T} Q S^{-1} = diag(hsv)."""

    S: np.ndarray
    S_inv: np.ndarray
    hsv: np.ndarray


@dataclass(frozen=True)
class ReductionResult:
    """A reduced-order model together with how it was obtained.

    ``rom_mean_square_stable`` records the verified stability of the reduced
    model.  For IRKA, ``V`` and ``W`` are the final projection bases and
    ``iterations``/``converged`` describe the fixed-point iteration; for the
    balancing methods they stay at their defaults.  ``details`` carries
    method-specific diagnostics (A22 condition number, DC-gain match, HSV
    cluster warnings).
    """

    rom: BilinearSystem
    method: str
    transform: BalancingTransform | None = None
    hsv_kept: np.ndarray | None = None
    hsv_dropped: np.ndarray | None = None
    iterations: int = 0
    converged: bool = True
    rom_mean_square_stable: bool | None = None
    V: np.ndarray | None = None
    W: np.ndarray | None = None
    details: dict = field(default_factory=dict)


def _psd_factor(M: np.ndarray, name: str) -> np.ndarray:
    """Symmetric square-root factor with small negative eigenvalues clipped."""
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    top = float(lam.max())
    lam = np.clip(lam, 0.0, None)
    if top <= 0.0 or lam.min() < GRAMIAN_RANK_RTOL * top:
        raise RankDeficiencyError(
            f"{name} Gramian is numerically singular "
            f"(eig range [{lam.min():.3e}, {top:.3e}]); balancing needs full rank"
        )
    return V * np.sqrt(lam)


def balance(sys: BilinearSystem, P: np.ndarray, Q: np.ndarray) -> BalancingTransform:
    """Contragredient transformation diagonalizing both Gramians jointly."""
    sys.require_valid()
    K = _psd_factor(np.asarray(P, dtype=float), "reachability")
    L = _psd_factor(np.asarray(Q, dtype=float), "observability")
    V, s, Uh = np.linalg.svd(K.T @ L)
    if s.min() <= 0 or s.min() < GRAMIAN_RANK_RTOL * s.max():
        raise RankDeficiencyError(
            "product of Gramian factors is numerically rank deficient"
        )
    s_isqrt = 1.0 / np.sqrt(s)
    S = (s_isqrt[:, None]) * (Uh @ L.T)
    S_inv = (K @ V) * s_isqrt[None, :]
    return BalancingTransform(S=S, S_inv=S_inv, hsv=s)


def apply_transform(sys: BilinearSystem, S: np.ndarray, S_inv: np.ndarray) -> BilinearSystem:
    """Change of state coordinates x -> S x."""
    return BilinearSystem(
        A=S @ sys.A @ S_inv,
        B=S @ sys.B,
        C=sys.C @ S_inv,
        N=tuple(S @ Nk @ S_inv for Nk in sys.N),
    )


def _check_order(r: int, n: int) -> None:
    if not 1 <= r <= n:
        raise ParameterError(f"reduced order must satisfy 1 <= r <= {n}, got {r}")


def _cluster_warning(hsv: np.ndarray, r: int) -> str | None:
    if r < hsv.size and hsv[r - 1] - hsv[r] < HSV_CLUSTER_RTOL * hsv[0]:
        msg = (
            f"order {r} splits a Hankel singular value cluster "
            f"(sigma_{r} = {hsv[r - 1]:.6e}, sigma_{r + 1} = {hsv[r]:.6e})"
        )
        warnings.warn(msg)
        return msg
    return None


def balanced_truncation(sys: BilinearSystem, r: int,
                        gramians: GramianSet | None = None) -> ReductionResult:
    """Reduce to order r by truncating the balanced realization."""
    sys.require_valid()
    _check_order(r, sys.n)
    if gramians is None:
        gramians = gramian_set(sys)
    tf = balance(sys, gramians.P, gramians.Q)
    bal = apply_transform(sys, tf.S, tf.S_inv)
    rom = BilinearSystem(
        A=bal.A[:r, :r],
        B=bal.B[:r, :],
        C=bal.C[:, :r],
        N=tuple(Nk[:r, :r] for Nk in bal.N),
    )
    details: dict = {}
    note = _cluster_warning(tf.hsv, r)
    if note:
        details["hsv_cluster_warning"] = note
    stable = bool(kron_stability(rom).mean_square_stable)
    return ReductionResult(
        rom=rom, method="bt", transform=tf,
        hsv_kept=tf.hsv[:r], hsv_dropped=tf.hsv[r:],
        rom_mean_square_stable=stable, details=details,
    )


def singular_perturbation(sys: BilinearSystem, r: int,
                          gramians: GramianSet | None = None) -> ReductionResult:
    """Reduce to order r by balancing and folding the fast block to steady state.

    The discarded states are replaced by -A22^{-1} A21 x1, which corrects A, C,
    and every N_k while keeping B1; the reduction matches the full system at
    zero frequency.
    """
    sys.require_valid()
    _check_order(r, sys.n)
    if gramians is None:
        gramians = gramian_set(sys)
    tf = balance(sys, gramians.P, gramians.Q)
    bal = apply_transform(sys, tf.S, tf.S_inv)
    details: dict = {}
    note = _cluster_warning(tf.hsv, r)
    if note:
        details["hsv_cluster_warning"] = note
    if r == sys.n:
        rom = bal
        details["a22_condition"] = 1.0
    else:
        A11, A12 = bal.A[:r, :r], bal.A[:r, r:]
        A21, A22 = bal.A[r:, :r], bal.A[r:, r:]
        cond = float(np.linalg.cond(A22))
        details["a22_condition"] = cond
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularityError(
                f"A22 block is numerically singular (condition estimate {cond:.3e})"
            )
        X = np.linalg.solve(A22, A21)
        rom = BilinearSystem(
            A=A11 - A12 @ X,
            B=bal.B[:r, :],
            C=bal.C[:, :r] - bal.C[:, r:] @ X,
            N=tuple(Nk[:r, :r] - Nk[:r, r:] @ X for Nk in bal.N),
        )
    # zero-frequency match of the linear part, recorded as a diagnostic
    try:
        g_full = sys.C @ np.linalg.solve(-sys.A, sys.B)
        g_rom = rom.C @ np.linalg.solve(-rom.A, rom.B)
        scale = max(float(np.linalg.norm(g_full)), 1e-300)
        details["dc_gain_rel_gap"] = float(np.linalg.norm(g_full - g_rom)) / scale
    except np.linalg.LinAlgError:
        details["dc_gain_rel_gap"] = float("nan")
    stable = bool(kron_stability(rom).mean_square_stable)
    return ReductionResult(
        rom=rom, method="spa", transform=tf,
        hsv_kept=tf.hsv[:r], hsv_dropped=tf.hsv[r:],
        rom_mean_square_stable=stable, details=details,
    )


def _sorted_spectrum(A: np.ndarray) -> np.ndarray:
    lam = np.linalg.eigvals(A)
    order = np.lexsort((lam.imag, lam.real))
    return lam[order]


def _realify(M: np.ndarray, eigvals: np.ndarray) -> np.ndarray:
    """Real basis for the span of columns belonging to a conjugate spectrum.

    Columns of eigenvalues with nonnegative imaginary part contribute their
    real part, the conjugate partners their imaginary part.
    """
    cols = [
        M[:, j].real if eigvals[j].imag >= -1e-14 else M[:, j].imag
        for j in range(M.shape[1])
    ]
    return np.column_stack(cols)


def _orth(M: np.ndarray, what: str) -> np.ndarray:
    q, rr = np.linalg.qr(M)
    diag = np.abs(np.diag(rr))
    if diag.min() < 1e-13 * max(diag.max(), 1e-300):
        raise SingularityError(f"{what} basis is numerically rank deficient")
    return q


def _random_rom(sys: BilinearSystem, r: int, seed: int | None) -> BilinearSystem:
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((r, r)) / np.sqrt(r)
    A = R - (np.linalg.eigvals(R).real.max() + 1.0) * np.eye(r)
    return BilinearSystem(
        A=A,
        B=rng.standard_normal((r, sys.m)),
        C=rng.standard_normal((sys.p, r)),
        N=tuple(0.1 * rng.standard_normal((r, r)) / np.sqrt(r) for _ in range(sys.m)),
    )


def bilinear_irka(
    sys: BilinearSystem,
    r: int,
    init: "BilinearSystem | ReductionResult | str | None" = None,
    tol: float = 1e-8,
    maxit: int = 100,
    seed: int | None = None,
) -> ReductionResult:
    """Fixed-point projection iteration toward an H2-optimal reduced model.

    Each sweep diagonalizes the current reduced A, solves the two generalized
    Sylvester systems

        -V D - A  V - sum_k N_k   V  Nt_k^T = B  Bt^T
        -W D - A^T W - sum_k N_k^T W  Nt_k  = C^T Ct

    in complex arithmetic, realifies and orthonormalizes V, W, and projects
    with (W^T V)^{-1} W^T (.) V.  Convergence is declared when the sorted
    reduced spectrum changes by less than ``tol`` relatively.  ``init`` may be
    a system, a previous ReductionResult, the string "random", or None for a
    balanced-truncation start.
    """
    sys.require_valid()
    _check_order(r, sys.n)
    if init is None:
        rom = balanced_truncation(sys, r).rom
    elif isinstance(init, ReductionResult):
        rom = init.rom
    elif isinstance(init, BilinearSystem):
        rom = init
    elif init == "random":
        rom = _random_rom(sys, r, seed)
    else:
        raise ParameterError(f"unsupported IRKA init {init!r}")
    if rom.n != r or rom.m != sys.m or rom.p != sys.p:
        raise ParameterError("IRKA init has inconsistent dimensions")

    A, B, C = sys.A, sys.B, sys.C
    N = [Nk for Nk in sys.N]
    lam_old = _sorted_spectrum(rom.A)
    V = W = None
    converged = False
    iterations = 0
    for iterations in range(1, maxit + 1):
        d, Evecs = np.linalg.eig(rom.A)
        if np.linalg.cond(Evecs) > 1e12:
            raise SingularityError("reduced A is too close to defective to diagonalize")
        Sm = np.linalg.inv(Evecs)           # rom.A = Evecs diag(d) Sm
        D = np.diag(d)
        Bt = Sm @ rom.B
        Ct = rom.C @ Evecs
        Nt = [Sm @ Nk @ Evecs for Nk in rom.N]
        Ac = A.astype(complex)
        Vc = solve_generalized_sylvester(
            Ac, D, [Nk.astype(complex) for Nk in N], Nt, -(B @ Bt.T)
        )
        Wc = solve_generalized_sylvester(
            Ac.T, D, [Nk.T.astype(complex) for Nk in N], [Nk.T for Nk in Nt],
            -(C.T @ Ct),
        )
        V = _orth(_realify(Vc, d), "V")
        W = _orth(_realify(Wc, d), "W")
        M = W.T @ V
        if np.linalg.cond(M) > 1e12:
            raise SingularityError("projection breakdown: W^T V is numerically singular")
        E = np.linalg.solve(M, W.T)
        rom = BilinearSystem(
            A=E @ A @ V, B=E @ B, C=C @ V, N=tuple(E @ Nk @ V for Nk in N)
        )
        lam = _sorted_spectrum(rom.A)
        change = float(np.linalg.norm(lam - lam_old) / max(np.linalg.norm(lam_old), 1e-300))
        lam_old = lam
        if change < tol:
            converged = True
            break
    stable = bool(kron_stability(rom).mean_square_stable)
    return ReductionResult(
        rom=rom, method="irka", iterations=iterations, converged=converged,
        rom_mean_square_stable=stable, V=V, W=W,
    )


def optimality_residuals(full: BilinearSystem, reduced: BilinearSystem,
                         gramians: GramianSet | None = None) -> tuple[float, float, float, float]:
    """Relative residuals of the four first-order H2 optimality conditions.

    Returns (output, input, cross, bilinear) residuals of

        Ch Ph = C Pg,   Qh Bh = Qg B,   Qh Ph = Qg Pg,   Qh Nh_k Ph = Qg N_k Pg,

    each normalized by the larger side's Frobenius norm; the bilinear entry is
    the worst channel.
    """
    if gramians is None or gramians.P_hat is None:
        gramians = gramian_set(full, reduced)
    Ph, Qh, Pg, Qg = gramians.P_hat, gramians.Q_hat, gramians.P_g, gramians.Q_g

    def rel(lhs: np.ndarray, rhs: np.ndarray) -> float:
        scale = max(float(np.linalg.norm(lhs)), float(np.linalg.norm(rhs)))
        if scale == 0.0:
            return 0.0
        return float(np.linalg.norm(lhs - rhs)) / scale

    r_out = rel(reduced.C @ Ph, full.C @ Pg)
    r_in = rel(Qh @ reduced.B, Qg @ full.B)
    r_cross = rel(Qh @ Ph, Qg @ Pg)
    r_bil = max(
        rel(Qh @ Nh @ Ph, Qg @ Nk @ Pg)
        for Nh, Nk in zip(reduced.N, full.N)
    ) if full.m else 0.0
    return (r_out, r_in, r_cross, r_bil)
