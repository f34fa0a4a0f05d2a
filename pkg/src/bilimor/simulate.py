"""Deterministic integration of bilinear systems and matrix flows.

Fixed-step classical RK4 throughout, for bit-reproducible runs.  Control
discontinuities at the support horizon are never straddled by a step: the
stepping sequence is split there and the zero tail is integrated with the
zero signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError, ParameterError
from .sysmodel import BilinearSystem, ControlSignal, u0_mask

__all__ = [
    "Trajectory",
    "MatrixPath",
    "GronwallMargins",
    "make_grid",
    "integrate_bilinear",
    "fundamental_solution",
    "integrate_matrix_ode",
    "gronwall_check",
    "sup_output",
    "decay_envelope_check",
]

DEFAULT_STEP = 1e-3
OVERFLOW_GUARD = 1e12


@dataclass(frozen=True)
class Trajectory:
    """States and outputs sampled on an increasing time grid."""

    grid: np.ndarray
    states: np.ndarray   # (len(grid), n)
    outputs: np.ndarray  # (len(grid), p)


@dataclass(frozen=True)
class MatrixPath:
    """A matrix-valued path sampled on an increasing time grid."""

    grid: np.ndarray
    matrices: np.ndarray  # (len(grid), n, n)


@dataclass(frozen=True)
class GronwallMargins:
    """Pointwise least eigenvalues of the comparison-flow surplus.

    margin(t) = min eig( exp(E(t)) * Zbar(t - s) - x(t) x(t)^T ), where E is
    the running squared-norm integral of the active control channels.  All
    margins must be nonnegative up to roundoff; ``zbar_norms`` supplies the
    per-point spectral norm used to scale tolerances.
    """

    grid: np.ndarray
    margins: np.ndarray
    zbar_norms: np.ndarray


def make_grid(t_end: float, step: float, t_start: float = 0.0) -> np.ndarray:
    """Uniform grid from t_start to t_end inclusive with spacing <= step."""
    if t_end <= t_start:
        raise ParameterError(f"grid end {t_end} must exceed start {t_start}")
    nstep = max(1, int(np.ceil((t_end - t_start) / step - 1e-12)))
    return np.linspace(t_start, t_end, nstep + 1)


def _check_grid(grid: np.ndarray, start: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ParameterError("grid must be a 1-d array of time points")
    if abs(grid[0] - start) > 1e-12:
        raise ParameterError(f"grid must start at {start}, got {grid[0]}")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ParameterError("grid must be strictly increasing")
    return grid


def _fine_times(grid: np.ndarray, step: float, breakpoints: tuple[float, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Substep sequence through all grid points and breakpoints.

    Returns (times, out_index) where out_index[j] is the position of grid[j]
    in times.  Substeps within a segment are uniform and no wider than step.
    """
    knots = set(float(t) for t in grid)
    for b in breakpoints:
        if grid[0] < b < grid[-1]:
            knots.add(float(b))
    knots_arr = np.array(sorted(knots))
    pieces = [np.array([knots_arr[0]])]
    for a, b in zip(knots_arr[:-1], knots_arr[1:]):
        k = max(1, int(np.ceil((b - a) / step - 1e-12)))
        pieces.append(np.linspace(a, b, k + 1)[1:])
    times = np.concatenate(pieces)
    out_index = np.searchsorted(times, grid)
    # guard against roundoff in searchsorted
    out_index = np.array([
        idx if abs(times[idx] - g) < 1e-9 else int(np.argmin(np.abs(times - g)))
        for idx, g in zip(out_index, grid)
    ])
    return times, out_index


def _guard(x: np.ndarray, t: float) -> None:
    nrm = float(np.linalg.norm(x))
    if not np.isfinite(nrm) or nrm > OVERFLOW_GUARD:
        raise DivergenceError(f"state norm {nrm:.3e} exceeded overflow guard at t={t:.6g}")


def _control_on_segment(u: ControlSignal | None, t_left: float):
    """Effective control callable for a step starting at t_left.

    Past the horizon the signal is identically zero; a step starting at the
    horizon belongs to the zero tail (the jump is never straddled).
    """
    if u is None:
        return None
    if t_left >= u.horizon - 1e-14:
        return None
    return u


def integrate_bilinear(
    sys: BilinearSystem,
    u: ControlSignal | None,
    x0: np.ndarray,
    grid: np.ndarray,
    step: float | None = None,
) -> Trajectory:
    """Integrate the bilinear state equation with classical RK4.

    ``grid`` lists the requested output times, starting at 0.  A ``None``
    control means the homogeneous equation with B ignored.
    """
    sys.require_valid()
    grid = _check_grid(grid, 0.0)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise DimensionError(f"x0 must have length {sys.n}, got {x.shape}")
    h_max = step if step is not None else min(DEFAULT_STEP, float(np.min(np.diff(grid))) if grid.size > 1 else DEFAULT_STEP)
    breaks = (u.horizon,) if u is not None else ()
    times, out_index = _fine_times(grid, h_max, breaks)

    A, B, N = sys.A, sys.B, sys.N
    active = [k for k in range(sys.m) if np.linalg.norm(N[k]) > 0.0]

    def rhs(t: float, xv: np.ndarray, useg: ControlSignal | None) -> np.ndarray:
        if useg is None:
            return A @ xv
        uv = useg(t)
        dx = A @ xv + B @ uv
        for k in active:
            dx += (N[k] @ xv) * uv[k]
        return dx

    states = np.empty((grid.size, sys.n))
    pos = 0
    if out_index[0] == 0:
        states[0] = x
        pos = 1
    for i in range(times.size - 1):
        t, t1 = times[i], times[i + 1]
        h = t1 - t
        useg = _control_on_segment(u, t)
        k1 = rhs(t, x, useg)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1, useg)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2, useg)
        k4 = rhs(t1, x + h * k3, useg)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(x, t1)
        while pos < grid.size and out_index[pos] == i + 1:
            states[pos] = x
            pos += 1
    outputs = states @ sys.C.T
    return Trajectory(grid=grid, states=states, outputs=outputs)


def fundamental_solution(
    sys: BilinearSystem,
    u: ControlSignal | None,
    s: float,
    grid: np.ndarray,
    step: float | None = None,
) -> MatrixPath:
    """State-transition matrix path Phi(t, s) of the homogeneous equation.

    Solves dPhi/dt = (A + sum_k N_k u_k(t)) Phi from Phi(s, s) = I on a grid
    that must start at s.
    """
    sys.require_valid()
    grid = _check_grid(grid, s)
    n = sys.n
    h_max = step if step is not None else min(DEFAULT_STEP, float(np.min(np.diff(grid))) if grid.size > 1 else DEFAULT_STEP)
    breaks = (u.horizon,) if u is not None else ()
    times, out_index = _fine_times(grid, h_max, breaks)
    A, N = sys.A, sys.N
    active = [k for k in range(sys.m) if np.linalg.norm(N[k]) > 0.0]

    def coeff(t: float, useg: ControlSignal | None) -> np.ndarray:
        if useg is None:
            return A
        uv = useg(t)
        M = A.copy()
        for k in active:
            M += N[k] * uv[k]
        return M

    Phi = np.eye(n)
    mats = np.empty((grid.size, n, n))
    pos = 0
    if out_index[0] == 0:
        mats[0] = Phi
        pos = 1
    for i in range(times.size - 1):
        t, t1 = times[i], times[i + 1]
        h = t1 - t
        useg = _control_on_segment(u, t)
        k1 = coeff(t, useg) @ Phi
        Mmid = coeff(t + 0.5 * h, useg)
        k2 = Mmid @ (Phi + 0.5 * h * k1)
        k3 = Mmid @ (Phi + 0.5 * h * k2)
        k4 = coeff(t1, useg) @ (Phi + h * k3)
        Phi = Phi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(Phi, t1)
        while pos < grid.size and out_index[pos] == i + 1:
            mats[pos] = Phi
            pos += 1
    return MatrixPath(grid=grid, matrices=mats)


def _lyap_rhs(A: np.ndarray, N: tuple[np.ndarray, ...], active: list[int], Z: np.ndarray) -> np.ndarray:
    dZ = A @ Z + Z @ A.T
    for k in active:
        dZ += N[k] @ Z @ N[k].T
    return dZ


def integrate_matrix_ode(
    sys: BilinearSystem,
    Z0: np.ndarray,
    grid: np.ndarray,
    step: float | None = None,
    accumulate: bool = False,
) -> MatrixPath | tuple[MatrixPath, MatrixPath]:
    """Integrate Zbar' = A Zbar + Zbar A^T + sum_k N_k Zbar N_k^T by RK4.

    The iterate is symmetrized every step.  With ``accumulate`` a second path
    carrying the running integral of Zbar is returned as well (endpoint-
    corrected trapezoid, fourth order: the integrand derivative is the RK4
    stage already available at each endpoint).
    """
    sys.require_valid()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or (grid.size > 1 and np.any(np.diff(grid) <= 0)):
        raise ParameterError("grid must be a strictly increasing 1-d array")
    Z = np.asarray(Z0, dtype=float)
    n = sys.n
    if Z.shape != (n, n):
        raise DimensionError(f"Z0 must be {n}x{n}, got {Z.shape}")
    if np.linalg.norm(Z - Z.T) > 1e-8 * max(1.0, np.linalg.norm(Z)):
        raise ParameterError("Z0 must be symmetric")
    Z = 0.5 * (Z + Z.T)
    h_max = step if step is not None else min(DEFAULT_STEP, float(np.min(np.diff(grid))) if grid.size > 1 else DEFAULT_STEP)
    times, out_index = _fine_times(grid, h_max, ())
    A, N = sys.A, sys.N
    active = [k for k in range(sys.m) if np.linalg.norm(N[k]) > 0.0]

    mats = np.empty((grid.size, n, n))
    acc = np.zeros((n, n))
    accs = np.empty((grid.size, n, n)) if accumulate else None
    pos = 0
    if out_index[0] == 0:
        mats[0] = Z
        if accumulate:
            accs[0] = acc
        pos = 1
    d_left = _lyap_rhs(A, N, active, Z)
    for i in range(times.size - 1):
        h = times[i + 1] - times[i]
        k1 = d_left
        k2 = _lyap_rhs(A, N, active, Z + 0.5 * h * k1)
        k3 = _lyap_rhs(A, N, active, Z + 0.5 * h * k2)
        k4 = _lyap_rhs(A, N, active, Z + h * k3)
        Z_new = Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Z_new = 0.5 * (Z_new + Z_new.T)
        _guard(Z_new, times[i + 1])
        d_right = _lyap_rhs(A, N, active, Z_new)
        if accumulate:
            acc = acc + 0.5 * h * (Z + Z_new) - (h * h / 12.0) * (d_right - d_left)
        Z, d_left = Z_new, d_right
        while pos < grid.size and out_index[pos] == i + 1:
            mats[pos] = Z
            if accumulate:
                accs[pos] = 0.5 * (acc + acc.T)
            pos += 1
    path = MatrixPath(grid=grid, matrices=mats)
    if accumulate:
        return path, MatrixPath(grid=grid, matrices=accs)
    return path


def _simpson_increment(f0: float, fm: float, f1: float, h: float) -> float:
    return (h / 6.0) * (f0 + 4.0 * fm + f1)


def gronwall_check(
    sys: BilinearSystem,
    u: ControlSignal,
    x0: np.ndarray,
    s: float,
    grid: np.ndarray,
    step: float | None = None,
) -> GronwallMargins:
    """Numerical check of the matrix comparison estimate for the homogeneous flow.

    Integrates, in lockstep, the homogeneous state x from x(s) = x0 under the
    control, the comparison flow Zbar from x0 x0^T, and the running integral
    E(t) of ||u0(tau)||^2 over [s, t] (u0 = channels with nonzero N_k).  The
    reported margin at each grid point is the least eigenvalue of
    exp(E) * Zbar - x x^T, which the ordering principle keeps nonnegative.
    """
    sys.require_valid()
    grid = _check_grid(grid, s)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (sys.n,):
        raise DimensionError(f"x0 must have length {sys.n}, got {x.shape}")
    h_max = step if step is not None else min(DEFAULT_STEP, float(np.min(np.diff(grid))) if grid.size > 1 else DEFAULT_STEP)
    times, out_index = _fine_times(grid, h_max, (u.horizon,))
    A, N = sys.A, sys.N
    active = [k for k in range(sys.m) if np.linalg.norm(N[k]) > 0.0]
    mask = u0_mask(sys).active

    def xdot(t: float, xv: np.ndarray, useg: ControlSignal | None) -> np.ndarray:
        if useg is None:
            return A @ xv
        uv = useg(t)
        dx = A @ xv
        for k in active:
            dx += (N[k] @ xv) * uv[k]
        return dx

    def u0_sq(t: float, useg: ControlSignal | None) -> float:
        if useg is None:
            return 0.0
        uv = useg(t)
        return float(np.sum(uv[mask] ** 2))

    Z = np.outer(x, x)
    E = 0.0
    margins = np.empty(grid.size)
    znorms = np.empty(grid.size)
    pos = 0

    def record(idx: int) -> None:
        surplus = np.exp(E) * Z - np.outer(x, x)
        margins[idx] = float(np.linalg.eigvalsh(0.5 * (surplus + surplus.T)).min())
        znorms[idx] = float(np.linalg.norm(np.exp(E) * Z, 2))

    if out_index[0] == 0:
        record(0)
        pos = 1
    for i in range(times.size - 1):
        t, t1 = times[i], times[i + 1]
        h = t1 - t
        useg = _control_on_segment(u, t)
        tm = t + 0.5 * h
        # state
        k1 = xdot(t, x, useg)
        k2 = xdot(tm, x + 0.5 * h * k1, useg)
        k3 = xdot(tm, x + 0.5 * h * k2, useg)
        k4 = xdot(t1, x + h * k3, useg)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        # comparison flow (control independent)
        K1 = _lyap_rhs(A, N, active, Z)
        K2 = _lyap_rhs(A, N, active, Z + 0.5 * h * K1)
        K3 = _lyap_rhs(A, N, active, Z + 0.5 * h * K2)
        K4 = _lyap_rhs(A, N, active, Z + h * K3)
        Z = Z + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        Z = 0.5 * (Z + Z.T)
        # exponent integral, Simpson on the substep
        E += _simpson_increment(u0_sq(t, useg), u0_sq(tm, useg), u0_sq(t1, useg), h)
        _guard(x, t1)
        _guard(Z, t1)
        while pos < grid.size and out_index[pos] == i + 1:
            record(pos)
            pos += 1
    return GronwallMargins(grid=grid, margins=margins, zbar_norms=znorms)


def sup_output(traj: Trajectory) -> float:
    """Largest Euclidean output norm attained on the trajectory grid."""
    if traj.outputs.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(traj.outputs, axis=1)))


def decay_envelope_check(
    sys: BilinearSystem,
    u: ControlSignal,
    x0: np.ndarray,
    gamma: float,
    k1: float,
    k2: float,
    t_end: float | None = None,
    step: float | None = None,
    slack: float = 1e-6,
) -> bool:
    """Check the exponential decay envelope for the homogeneous flow.

    Verifies ||x(t)||^2 <= exp(gamma^2 ||u0||_{L2}^2) ||x0||^2 k1 e^{-k2 t}
    on a grid covering the control support plus a decay tail, with additive
    ``slack``.  (k1, k2) are the mean-square decay constants of the rescaled
    comparison system, e.g. from a stochastic decay fit.
    """
    from .bounds import control_l2_norms  # local import to avoid a cycle
    from .errors import StabilityError

    sys.require_valid()
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    abscissa = float(np.linalg.eigvals(sys.A).real.max())
    if abscissa >= 0:
        raise StabilityError(f"A is not Hurwitz (spectral abscissa {abscissa:.3e})")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    _, l2_u0 = control_l2_norms(u, u0_mask(sys))
    if t_end is None:
        t_end = u.horizon + 5.0 / abs(abscissa)
    grid = make_grid(t_end, step if step is not None else DEFAULT_STEP)
    hom = BilinearSystem(A=sys.A, B=np.zeros_like(sys.B), C=sys.C, N=sys.N)
    traj = integrate_bilinear(hom, u, x0, grid, step=step)
    sq = np.sum(traj.states ** 2, axis=1)
    envelope = (
        np.exp(gamma ** 2 * l2_u0 ** 2)
        * float(np.dot(x0, x0))
        * k1
        * np.exp(-k2 * grid)
    )
    return bool(np.all(sq <= envelope + slack))
