"""Monte Carlo verification of the stochastic comparison system.

The homogeneous bilinear equation with the controls replaced by independent
Brownian increments,

    dz = A z dt + sum_k N_k z dw_k,    z(0) = x0,

has a second moment E[z z^T] that solves the comparison matrix flow started
from x0 x0^T.  Euler-Maruyama sampling of this SDE therefore gives an
independent statistical route to the flow, and the decay rate of the sampled
mean-square norm certifies (or refutes) mean-square stability.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, ParameterError
from .simulate import GronwallMargins, gronwall_check, integrate_matrix_ode, make_grid
from .sysmodel import BilinearSystem, ControlSignal, u0_mask

__all__ = [
    "MomentPath",
    "DecayFit",
    "simulate_sde",
    "moment_check",
    "moment_tolerance",
    "decay_fit",
    "bilinear_stochastic_domination",
]

PATH_GUARD = 1e12
GUARD_CHECK_EVERY = 10
CHUNK = 512
EXCLUSION_WARN_FRACTION = 0.01
# weak-error constant of the Euler scheme entering the moment tolerance
EULER_BIAS_CONSTANT = 10.0


@dataclass(frozen=True)
class MomentPath:
    """Sample second moments (1/M) sum_j z_j(t) z_j(t)^T on a uniform grid.

    The moments are exact sums of outer products of the surviving paths, so
    they are symmetric positive semidefinite by construction.  ``excluded``
    counts paths removed by the overflow guard; the estimator averages over
    the remaining ones.
    """

    grid: np.ndarray
    moments: np.ndarray  # (len(grid), n, n)
    paths: int
    seed: int
    excluded: int


@dataclass(frozen=True)
class DecayFit:
    """Exponential envelope fit of the sampled mean-square norm.

    ``k2`` is the least-squares decay rate of log tr M(t) over the tail half
    of the window (negative when the system grows).  ``k1`` is raised until
    k1 * exp(-k2 t) dominates the samples on the whole window, so the pair is
    a genuine envelope of the observed moments, not just a regression line.
    """

    k1: float
    k2: float
    residual: float


def _path_key(seed: int, index: int) -> np.random.Generator:
    # counter-based stream per (seed, path); independent of execution order
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _chunk_moments(sys: BilinearSystem, x0: np.ndarray, h: float, nsteps: int,
                   seed: int, indices: np.ndarray,
                   dead: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama moment sums for one block of paths.

    Returns (sums, alive): sums[i] is the outer-product sum over the block's
    live paths at grid point i, alive flags paths that never tripped the
    overflow guard.  ``dead`` masks paths excluded from the accumulation (used
    by the re-run after a divergence was detected).
    """
    n, m = sys.n, sys.m
    k = indices.size
    sqrt_h = np.sqrt(h)
    incr = np.empty((k, nsteps, m))
    for j, idx in enumerate(indices):
        incr[j] = _path_key(seed, int(idx)).standard_normal((nsteps, m)) * sqrt_h
    A_T = sys.A.T
    N_T = [Nk.T for Nk in sys.N]
    active = [kk for kk in range(m) if np.linalg.norm(sys.N[kk]) > 0.0]
    Z = np.broadcast_to(x0, (k, n)).copy()
    alive = np.ones(k, dtype=bool)
    if dead is not None:
        alive &= ~dead
        Z[~alive] = 0.0
    sums = np.empty((nsteps + 1, n, n))
    sums[0] = Z.T @ Z
    for i in range(nsteps):
        dZ = h * (Z @ A_T)
        for kk in active:
            dZ += (Z @ N_T[kk]) * incr[:, i, kk][:, None]
        Z = Z + dZ
        if (i + 1) % GUARD_CHECK_EVERY == 0 or i + 1 == nsteps:
            norms = np.einsum("pi,pi->p", Z, Z)
            bad = ~np.isfinite(norms) | (norms > PATH_GUARD ** 2)
            if bad.any():
                alive &= ~bad
                Z[bad] = 0.0  # keep the arithmetic finite; sums get recomputed
        sums[i + 1] = Z.T @ Z
    return sums, alive


def simulate_sde(
    sys: BilinearSystem,
    x0: np.ndarray,
    grid: np.ndarray,
    paths: int,
    seed: int,
) -> MomentPath:
    """Sample the multiplicative-noise SDE and return second-moment estimates.

    The grid must be uniform; the Euler-Maruyama step equals the grid spacing.
    Each path draws its Brownian increments from a counter-based stream keyed
    by (seed, path index), and moments are accumulated in fixed path order, so
    the result is bit-identical for a given (seed, paths, grid) regardless of
    chunking or parallelism.  Diverged paths are excluded from all grid points
    and counted.
    """
    sys.require_valid()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ParameterError("grid must contain at least two points")
    diffs = np.diff(grid)
    h = float(diffs[0])
    if abs(grid[0]) > 1e-12 or h <= 0 or np.any(np.abs(diffs - h) > 1e-9 * max(h, 1.0)):
        raise ParameterError("grid must be uniform and start at 0")
    if paths < 1:
        raise ParameterError(f"paths must be >= 1, got {paths}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n,):
        raise ParameterError(f"x0 must have length {sys.n}, got {x0.shape}")
    nsteps = grid.size - 1
    n = sys.n
    sums = np.zeros((grid.size, n, n))
    excluded = 0
    for start in range(0, paths, CHUNK):
        indices = np.arange(start, min(start + CHUNK, paths))
        chunk_sums, alive = _chunk_moments(sys, x0, h, nsteps, seed, indices)
        if not alive.all():
            # diverged paths must not contribute at any time: re-run the
            # chunk with them masked out (the streams are reproducible)
            excluded += int((~alive).sum())
            chunk_sums, _ = _chunk_moments(
                sys, x0, h, nsteps, seed, indices, dead=~alive
            )
        sums += chunk_sums
    survivors = paths - excluded
    if survivors == 0:
        raise ConsistencyError("all sample paths diverged; system is severely unstable")
    if excluded > EXCLUSION_WARN_FRACTION * paths:
        warnings.warn(
            f"{excluded} of {paths} sample paths hit the overflow guard; "
            "moment estimates are conditioned on survival"
        )
    moments = sums / survivors
    return MomentPath(grid=grid, moments=moments, paths=paths, seed=seed, excluded=excluded)


def moment_tolerance(paths: int, h: float, Z0: np.ndarray) -> float:
    """Statistical-plus-bias tolerance for the moment comparison.

    c / sqrt(M) with c = 5 * max(1, tr Z0), plus the Euler weak-error term
    EULER_BIAS_CONSTANT * h.
    """
    c = 5.0 * max(1.0, float(np.trace(Z0)))
    return c / np.sqrt(paths) + EULER_BIAS_CONSTANT * h


def moment_check(
    sys: BilinearSystem,
    x0: np.ndarray,
    grid: np.ndarray,
    paths: int,
    seed: int,
) -> tuple[float, bool]:
    """Compare the sampled second moment with the matrix-flow moment.

    Returns (max relative deviation, pass).  The deviation at each grid point
    is ||M(t) - Zbar(t)||_F / max(1, ||Zbar(t)||_F); the pass threshold is
    :func:`moment_tolerance`.
    """
    mp = simulate_sde(sys, x0, grid, paths, seed)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    Z0 = np.outer(x0, x0)
    ode = integrate_matrix_ode(sys, Z0, grid)
    devs = [
        float(np.linalg.norm(M - Z) / max(1.0, np.linalg.norm(Z)))
        for M, Z in zip(mp.moments, ode.matrices)
    ]
    dev = max(devs)
    h = float(grid[1] - grid[0])
    return dev, dev <= moment_tolerance(paths, h, Z0)


def decay_fit(
    sys: BilinearSystem,
    x0: np.ndarray,
    t_end: float,
    paths: int,
    seed: int,
    step: float = 5e-3,
) -> DecayFit:
    """Fit k1 * exp(-k2 t) over the sampled mean-square norm.

    The rate comes from least squares on log tr M(t) over the tail half of
    [0, t_end]; the amplitude is then lifted so the envelope dominates the
    samples everywhere (scaled by ||x0||^2).  When the system is verifiably
    mean-square stable yet the fitted rate is not positive, the fit is
    rejected as inconsistent.
    """
    from .lyapunov import kron_stability

    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if float(x0 @ x0) == 0.0:
        raise ParameterError("decay fit needs a nonzero initial state")
    grid = make_grid(t_end, step)
    mp = simulate_sde(sys, x0, grid, paths, seed)
    traces = np.einsum("tii->t", mp.moments)
    if np.any(traces <= 0.0):
        raise ConsistencyError("sampled mean-square norm vanished; cannot fit a rate")
    log_tr = np.log(traces)
    tail = grid >= 0.5 * t_end
    t_tail = grid[tail]
    y_tail = log_tr[tail]
    design = np.column_stack([np.ones_like(t_tail), -t_tail])
    coef, *_ = np.linalg.lstsq(design, y_tail, rcond=None)
    k2 = float(coef[1])
    residual = float(np.sqrt(np.mean((design @ coef - y_tail) ** 2)))
    x0_sq = float(x0 @ x0)
    # raise the amplitude until the envelope clears every sample
    k1 = float(np.max(traces * np.exp(k2 * grid))) / x0_sq
    if k2 <= 0.0 and kron_stability(sys).mean_square_stable:
        raise ConsistencyError(
            f"fitted rate {k2:.3e} is not positive although the system is "
            "mean-square stable; increase paths or the window"
        )
    return DecayFit(k1=k1, k2=k2, residual=residual)


def bilinear_stochastic_domination(
    sys: BilinearSystem,
    u: ControlSignal,
    x0: np.ndarray,
    grid: np.ndarray,
    paths: int | None = None,
    seed: int | None = None,
    use_mc: bool = False,
    step: float | None = None,
) -> GronwallMargins:
    """Margins of the stochastic domination of the controlled homogeneous flow.

    The deterministic x(t) x(t)^T is dominated by exp(E(t)) E[z z^T] with E
    the running squared norm of the active control channels.  By default the
    exact moment (the matrix flow) forms the right-hand side, which is the
    comparison-flow check; with ``use_mc`` the sampled moment replaces it,
    for illustration only, since statistical noise can produce spurious
    negative margins.
    """
    if not use_mc:
        return gronwall_check(sys, u, x0, 0.0, grid, step=step)
    if paths is None or seed is None:
        raise ParameterError("the Monte Carlo variant needs paths and seed")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    mp = simulate_sde(sys, x0, grid, paths, seed)
    # deterministic flow and exponent from the comparison-check engine
    det = gronwall_check(sys, u, x0, 0.0, grid, step=step)
    hom = BilinearSystem(A=sys.A, B=np.zeros_like(sys.B), C=sys.C, N=sys.N)
    from .simulate import integrate_bilinear

    traj = integrate_bilinear(hom, u, x0, np.asarray(grid, dtype=float), step=step)
    mask = u0_mask(sys).active
    # running exponent via Simpson on the output grid resolution
    exps = _running_exponent(u, mask, np.asarray(grid, dtype=float))
    margins = np.empty(len(grid))
    norms = np.empty(len(grid))
    for i in range(len(grid)):
        rhs = np.exp(exps[i]) * mp.moments[i]
        surplus = rhs - np.outer(traj.states[i], traj.states[i])
        margins[i] = float(np.linalg.eigvalsh(0.5 * (surplus + surplus.T)).min())
        norms[i] = float(np.linalg.norm(rhs, 2))
    return GronwallMargins(grid=np.asarray(grid, dtype=float), margins=margins, zbar_norms=norms)


def _running_exponent(u: ControlSignal, mask: np.ndarray, grid: np.ndarray) -> np.ndarray:
    vals = np.empty(grid.size)
    acc = 0.0
    vals[0] = 0.0

    def sq(t: float) -> float:
        v = u(t)[mask]
        return float(v @ v)

    for i in range(grid.size - 1):
        a, b = grid[i], grid[i + 1]
        acc += (b - a) / 6.0 * (sq(a) + 4.0 * sq(0.5 * (a + b)) + sq(b))
        vals[i + 1] = acc
    return vals
