"""Output bounds, output-error bounds, reachability estimates, and the
weighted truncation bounds.

Every bound has the product form

    sup_t ||y(t)||  <=  h2_quantity * exp(0.5 * ||u0||_L2^2) * ||u||_L2,

where u0 collects the control channels with a nonzero bilinear coupling.  If
the system is not mean-square stable, an input scaling gamma > 1 restores it
at the price of exp(0.5 * gamma^2 ||u0||^2) * gamma * ||u|| in the control
factor.  For a balanced realization the squared H2 error of truncation admits
the weighted-trace form tr(Sigma_2 K) with an explicit weighting matrix K,
evaluated here for both plain truncation and singular perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, ParameterError, SingularityError, StabilityError
from .gramians import GramianSet, gramian_set, h2_error
from .lyapunov import kron_stability
from .simulate import integrate_bilinear, make_grid, sup_output
from .sysmodel import (
    BilinearSystem,
    ControlSignal,
    U0Mask,
    build_error_system,
    gamma_threshold,
    rescale,
    u0_mask,
)

__all__ = [
    "BoundReport",
    "WeightedBoundResult",
    "ReachabilityEstimate",
    "control_l2_norms",
    "output_bound",
    "output_error_bound",
    "reachability_estimate",
    "bt_weighted_bound",
    "spa_weighted_bound",
    "simulation_horizon",
]

AUTO_GAMMA_MARGIN = 1.01
BALANCED_RTOL = 1e-6


@dataclass(frozen=True)
class BoundReport:
    """One evaluated bound: H2 part, control factor, and their product.

    ``control_factor`` is exp(0.5 * gamma^2 * l2_u0^2) * gamma * l2_u, i.e. the
    factor belonging to the effective control gamma * u; with gamma = 1 it is
    the plain exp(0.5 ||u0||^2) ||u||.  ``simulated_sup`` and ``ratio``
    (bound / simulated_sup) are filled only when a simulation was requested.
    """

    h2_quantity: float
    control_factor: float
    bound: float
    gamma: float
    l2_u: float
    l2_u0: float
    simulated_sup: float | None = None
    ratio: float | None = None


@dataclass(frozen=True)
class WeightedBoundResult:
    """A weighted truncation bound plus its verified trace identity.

    ``trace`` is tr(Sigma_2 K); ``h2_error_sq`` the squared H2 error of the
    corresponding reduced model computed independently through the mixed
    Gramians; ``identity_rel_gap`` their relative difference.
    """

    report: BoundReport
    K: np.ndarray
    trace: float
    h2_error_sq: float
    identity_rel_gap: float


@dataclass(frozen=True)
class ReachabilityEstimate:
    """Per-eigendirection output bounds |<x(t), v_k>| <= sqrt(lambda_k) f(u).

    Directions with small lambda_k are hard to reach: the state component
    along them stays small unless the control is large.  ``observed`` holds
    simulated suprema when a simulation was requested, else None.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray   # columns are the orthonormal eigendirections
    rhs: np.ndarray
    observed: np.ndarray | None


def _adaptive_simpson(f, a: float, b: float, rtol: float = 1e-8, max_depth: int = 48) -> float:
    """Adaptive Simpson quadrature with the standard 1/15 error estimate."""
    if b <= a:
        return 0.0

    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f1, f2, whole, depth):
        xm = 0.5 * (x0 + x2)
        xl, xr = 0.5 * (x0 + xm), 0.5 * (xm + x2)
        fl, fr = f(xl), f(xr)
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        if depth >= max_depth:
            return left + right
        err = (left + right - whole) / 15.0
        if abs(err) <= rtol * max(abs(left + right), 1e-300):
            return left + right + err
        return (
            recurse(x0, xm, f0, fl, f1, left, depth + 1)
            + recurse(xm, x2, f1, fr, f2, right, depth + 1)
        )

    fm = f(0.5 * (a + b))
    f0, f1 = f(a), f(b)
    return recurse(a, b, f0, fm, f1, simpson(a, b, f0, fm, f1), 0)


def control_l2_norms(u: ControlSignal, mask: U0Mask) -> tuple[float, float]:
    """L2 norms (||u||, ||u0||) over the control support.

    The squared norms are integrated by adaptive Simpson quadrature to a
    relative tolerance of 1e-8; u0 keeps only the channels flagged active.
    """
    active = np.asarray(mask.active, dtype=bool)
    if active.shape != (u.m,):
        raise ParameterError(f"mask length {active.size} does not match control m={u.m}")
    if u.horizon == 0.0:
        return 0.0, 0.0

    def full_sq(t: float) -> float:
        v = u(t)
        return float(v @ v)

    def masked_sq(t: float) -> float:
        v = u(t)[active]
        return float(v @ v)

    l2_sq = _adaptive_simpson(full_sq, 0.0, u.horizon)
    u0_sq = _adaptive_simpson(masked_sq, 0.0, u.horizon) if active.any() else 0.0
    return float(np.sqrt(max(l2_sq, 0.0))), float(np.sqrt(max(u0_sq, 0.0)))


def simulation_horizon(sys: BilinearSystem, u: ControlSignal) -> float:
    """Default window for simulated suprema: support plus a decay tail."""
    abscissa = float(np.linalg.eigvals(sys.A).real.max())
    if abscissa >= 0:
        raise StabilityError("simulation window needs a Hurwitz A")
    return u.horizon + 5.0 / abs(abscissa)


def _resolve_gamma(sys: BilinearSystem, gamma, extra: BilinearSystem | None = None) -> float:
    """Pick the input scaling: 1 when already mean-square stable, else a hair
    above the sufficient threshold; user values are verified for feasibility."""
    systems = [sys] + ([extra] if extra is not None else [])
    if gamma == "auto" or gamma is None:
        if all(kron_stability(s).mean_square_stable for s in systems):
            return 1.0
        thr = max(gamma_threshold(s) for s in systems)
        return AUTO_GAMMA_MARGIN * max(thr, 1.0)
    gamma = float(gamma)
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    for s in systems:
        if not kron_stability(rescale(s, gamma)).mean_square_stable:
            raise StabilityError(
                f"gamma = {gamma} is below the feasibility threshold: the "
                "scaled system is not mean-square stable"
            )
    return gamma


def _control_factor(gamma: float, l2_u: float, l2_u0: float) -> float:
    return float(np.exp(0.5 * gamma ** 2 * l2_u0 ** 2) * gamma * l2_u)


def output_bound(
    sys: BilinearSystem,
    u: ControlSignal,
    gamma="auto",
    simulate_sup: bool = False,
    step: float | None = None,
) -> BoundReport:
    """Bound on sup_t ||y(t)|| for zero initial state.

    With gamma = 1 this is sqrt(tr(C P C^T)) * exp(0.5 ||u0||^2) * ||u||; for
    an unstable bilinear part the system is rescaled first and the Gramian of
    the scaled system is used, multiplied by the gamma-inflated control
    factor.  Requires A Hurwitz.
    """
    sys.require_valid()
    if u.m != sys.m:
        raise ParameterError(f"control has m={u.m}, system expects {sys.m}")
    rep = kron_stability(sys)
    if not rep.hurwitz:
        raise StabilityError("output bound needs a Hurwitz A")
    g = _resolve_gamma(sys, gamma)
    scaled = rescale(sys, g) if g != 1.0 else sys
    gs = gramian_set(scaled, gamma_used=g)
    h2q = float(np.sqrt(max(np.trace(sys.C @ gs.P @ sys.C.T), 0.0)))
    l2_u, l2_u0 = control_l2_norms(u, u0_mask(sys))
    factor = _control_factor(g, l2_u, l2_u0)
    bound = h2q * factor
    sim = ratio = None
    if simulate_sup:
        grid = make_grid(simulation_horizon(sys, u), step if step is not None else 1e-3)
        traj = integrate_bilinear(sys, u, np.zeros(sys.n), grid, step=step)
        sim = sup_output(traj)
        ratio = bound / sim if sim > 0 else float("nan")
    return BoundReport(
        h2_quantity=h2q, control_factor=factor, bound=bound, gamma=g,
        l2_u=l2_u, l2_u0=l2_u0, simulated_sup=sim, ratio=ratio,
    )


def output_error_bound(
    full: BilinearSystem,
    reduced: BilinearSystem,
    u: ControlSignal,
    gamma="auto",
    simulate_sup: bool = False,
    step: float | None = None,
) -> BoundReport:
    """Bound on sup_t ||y(t) - y_hat(t)|| via the H2 error of the pair.

    Both systems receive the same input scaling; the H2 error of the scaled
    pair multiplies the gamma-inflated control factor.  The simulated supremum
    drives the stacked error system with the unscaled control, which is
    equivalent to the scaled pair under gamma * u.
    """
    full.require_valid()
    reduced.require_valid()
    if u.m != full.m:
        raise ParameterError(f"control has m={u.m}, system expects {full.m}")
    g = _resolve_gamma(full, gamma, extra=reduced)
    f_s = rescale(full, g) if g != 1.0 else full
    r_s = rescale(reduced, g) if g != 1.0 else reduced
    if not kron_stability(r_s).mean_square_stable:
        raise StabilityError("reduced system is not mean-square stable at this gamma")
    h2q = h2_error(f_s, r_s)
    l2_u, l2_u0 = control_l2_norms(u, u0_mask(full))
    factor = _control_factor(g, l2_u, l2_u0)
    bound = h2q * factor
    sim = ratio = None
    if simulate_sup:
        err = build_error_system(full, reduced)
        grid = make_grid(simulation_horizon(full, u), step if step is not None else 1e-3)
        traj = integrate_bilinear(err.system, u, np.zeros(err.system.n), grid, step=step)
        sim = sup_output(traj)
        ratio = bound / sim if sim > 0 else float("nan")
    return BoundReport(
        h2_quantity=h2q, control_factor=factor, bound=bound, gamma=g,
        l2_u=l2_u, l2_u0=l2_u0, simulated_sup=sim, ratio=ratio,
    )


def reachability_estimate(
    sys: BilinearSystem,
    u: ControlSignal,
    simulate: bool = False,
    step: float | None = None,
) -> ReachabilityEstimate:
    """Eigendirection table of the reachability Gramian with per-direction bounds."""
    sys.require_valid()
    if u.m != sys.m:
        raise ParameterError(f"control has m={u.m}, system expects {sys.m}")
    if not kron_stability(sys).mean_square_stable:
        raise StabilityError("reachability estimate needs mean-square stability")
    gs = gramian_set(sys)
    lam, V = np.linalg.eigh(gs.P)
    lam = np.clip(lam[::-1], 0.0, None)
    V = V[:, ::-1]
    l2_u, l2_u0 = control_l2_norms(u, u0_mask(sys))
    rhs = np.sqrt(lam) * np.exp(0.5 * l2_u0 ** 2) * l2_u
    observed = None
    if simulate:
        grid = make_grid(simulation_horizon(sys, u), step if step is not None else 1e-3)
        traj = integrate_bilinear(sys, u, np.zeros(sys.n), grid, step=step)
        observed = np.max(np.abs(traj.states @ V), axis=0)
    return ReachabilityEstimate(eigenvalues=lam, vectors=V, rhs=rhs, observed=observed)


def _require_balanced(sys: BilinearSystem) -> tuple[np.ndarray, GramianSet]:
    """Verify diagonal, equal Gramians and return (hsv, gramians)."""
    gs = gramian_set(sys)
    dP, dQ = np.diag(gs.P), np.diag(gs.Q)
    scale = max(float(np.linalg.norm(gs.P)), 1e-300)
    off = max(
        float(np.linalg.norm(gs.P - np.diag(dP))),
        float(np.linalg.norm(gs.Q - np.diag(dQ))),
        float(np.linalg.norm(gs.P - gs.Q)),
    )
    if off > BALANCED_RTOL * scale:
        raise ParameterError(
            "system is not balanced: Gramians are not equal diagonal matrices "
            f"(deviation {off:.3e} vs scale {scale:.3e}); balance it first"
        )
    hsv = dP
    if np.any(np.diff(hsv) > BALANCED_RTOL * max(hsv[0], 1e-300)):
        raise ParameterError("balanced Gramian diagonal is not sorted descending")
    return hsv, gs


def _weighted_report(
    sys: BilinearSystem,
    rom: BilinearSystem,
    hsv: np.ndarray,
    K: np.ndarray,
    r: int,
    u: ControlSignal,
    simulate_sup: bool,
    step: float | None,
) -> WeightedBoundResult:
    Sigma2 = np.diag(hsv[r:])
    trace = float(np.trace(Sigma2 @ K))
    err_sq = h2_error(sys, rom) ** 2
    gap = abs(trace - err_sq) / max(abs(err_sq), 1e-300) if err_sq > 0 else abs(trace)
    if trace < -1e-12 * max(hsv[0] ** 2, 1.0):
        raise ConsistencyError(f"weighted trace {trace:.3e} is negative")
    h2q = float(np.sqrt(max(trace, 0.0)))
    l2_u, l2_u0 = control_l2_norms(u, u0_mask(sys))
    factor = _control_factor(1.0, l2_u, l2_u0)
    bound = h2q * factor
    sim = ratio = None
    if simulate_sup:
        err = build_error_system(sys, rom)
        grid = make_grid(simulation_horizon(sys, u), step if step is not None else 1e-3)
        traj = integrate_bilinear(err.system, u, np.zeros(err.system.n), grid, step=step)
        sim = sup_output(traj)
        ratio = bound / sim if sim > 0 else float("nan")
    report = BoundReport(
        h2_quantity=h2q, control_factor=factor, bound=bound, gamma=1.0,
        l2_u=l2_u, l2_u0=l2_u0, simulated_sup=sim, ratio=ratio,
    )
    return WeightedBoundResult(
        report=report, K=K, trace=trace, h2_error_sq=err_sq, identity_rel_gap=gap,
    )


def bt_weighted_bound(
    sys: BilinearSystem,
    r: int,
    u: ControlSignal,
    simulate_sup: bool = False,
    step: float | None = None,
) -> WeightedBoundResult:
    """Weighted output-error bound for truncating a balanced realization.

    The weighting matrix is

        K = B2 B2^T + 2 Pg2 A21^T
            + sum_k (2 N_k22 Pg2 N_k21^T + 2 N_k21 Pg1 N_k21^T - N_k21 Ph N_k21^T)

    with Ph, Pg the reduced and mixed reachability Gramians of the truncated
    model, and the bound is sqrt(tr(Sigma_2 K)) times the control factor.  The
    identity tr(Sigma_2 K) = (H2 error)^2 is evaluated and recorded.
    """
    sys.require_valid()
    if not 1 <= r <= sys.n:
        raise ParameterError(f"reduced order must satisfy 1 <= r <= {sys.n}, got {r}")
    if not kron_stability(sys).mean_square_stable:
        raise StabilityError("weighted bound needs mean-square stability")
    hsv, _ = _require_balanced(sys)
    rom = BilinearSystem(
        A=sys.A[:r, :r], B=sys.B[:r, :], C=sys.C[:, :r],
        N=tuple(Nk[:r, :r] for Nk in sys.N),
    )
    if r == sys.n:
        return _weighted_report(sys, rom, hsv, np.zeros((0, 0)), r, u, simulate_sup, step)
    pair = gramian_set(sys, rom)
    Ph, Pg = pair.P_hat, pair.P_g
    Pg1, Pg2 = Pg[:r, :], Pg[r:, :]
    B2 = sys.B[r:, :]
    A21 = sys.A[r:, :r]
    K = B2 @ B2.T + 2.0 * Pg2 @ A21.T
    for Nk in sys.N:
        N21 = Nk[r:, :r]
        N22 = Nk[r:, r:]
        K = K + 2.0 * N22 @ Pg2 @ N21.T + 2.0 * N21 @ Pg1 @ N21.T - N21 @ Ph @ N21.T
    return _weighted_report(sys, rom, hsv, K, r, u, simulate_sup, step)


def spa_weighted_bound(
    sys: BilinearSystem,
    r: int,
    u: ControlSignal,
    simulate_sup: bool = False,
    step: float | None = None,
) -> WeightedBoundResult:
    """Weighted output-error bound for singular perturbation of a balanced system.

    The weighting matrix replaces the truncation couplings by their
    steady-state corrected versions M_k = N_k21 - N_k22 A22^{-1} A21:

        K = B2 B2^T - 2 (A22 Pg2 + A21 Pg1)(A22^{-1} A21)^T
            + sum_k (2 (N_k22 Pg2 + N_k21 Pg1) M_k^T - M_k Ph M_k^T),

    with Ph, Pg belonging to the steady-state reduced model.  Requires an
    invertible A22 and a reduced spectrum bounded away from zero; the trace
    identity against the H2 error is evaluated and recorded.
    """
    from .lyapunov import _kron_operator  # dense check of the reduced operator

    sys.require_valid()
    if not 1 <= r <= sys.n:
        raise ParameterError(f"reduced order must satisfy 1 <= r <= {sys.n}, got {r}")
    if not kron_stability(sys).mean_square_stable:
        raise StabilityError("weighted bound needs mean-square stability")
    hsv, _ = _require_balanced(sys)
    if r == sys.n:
        return _weighted_report(sys, sys, hsv, np.zeros((0, 0)), r, u, simulate_sup, step)
    A22 = sys.A[r:, r:]
    cond = float(np.linalg.cond(A22))
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularityError(
            f"A22 block is numerically singular (condition estimate {cond:.3e})"
        )
    X = np.linalg.solve(A22, sys.A[r:, :r])
    rom = BilinearSystem(
        A=sys.A[:r, :r] - sys.A[:r, r:] @ X,
        B=sys.B[:r, :],
        C=sys.C[:, :r] - sys.C[:, r:] @ X,
        N=tuple(Nk[:r, :r] - Nk[:r, r:] @ X for Nk in sys.N),
    )
    rom_rep = kron_stability(rom)
    if not rom_rep.mean_square_stable:
        raise StabilityError(
            "steady-state reduced model is not mean-square stable; the "
            "weighted bound does not apply"
        )
    # the reduced vectorized operator must also be boundedly invertible
    if rom.n ** 2 <= 4096:
        Lr = _kron_operator(rom.A, rom.A, rom.N, rom.N)
        sv_min = float(np.linalg.svd(Lr, compute_uv=False).min())
        if sv_min < 1e-12 * max(1.0, float(np.linalg.norm(Lr, 2))):
            raise SingularityError(
                "the reduced vectorized operator has a near-zero singular "
                f"value ({sv_min:.3e}); the steady-state Gramians are not defined"
            )
    pair = gramian_set(sys, rom)
    Ph, Pg = pair.P_hat, pair.P_g
    Pg1, Pg2 = Pg[:r, :], Pg[r:, :]
    B2 = sys.B[r:, :]
    A21 = sys.A[r:, :r]
    K = B2 @ B2.T - 2.0 * (A22 @ Pg2 + A21 @ Pg1) @ X.T
    for Nk in sys.N:
        N21 = Nk[r:, :r]
        N22 = Nk[r:, r:]
        M = N21 - N22 @ X
        K = K + 2.0 * (N22 @ Pg2 + N21 @ Pg1) @ M.T - M @ Ph @ M.T
    return _weighted_report(sys, rom, hsv, K, r, u, simulate_sup, step)
