"""Bilinear state-space systems, control signals, and related constructions.

A bilinear system is

    x'(t) = A x(t) + B u(t) + sum_k N_k x(t) u_k(t),    y(t) = C x(t),

with A, N_k square of order n, B of shape (n, m), and C of shape (p, n).
Reduced-order models are instances of the same type with n replaced by r.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
from scipy.io import mmread, mmwrite

from .errors import DimensionError, ParameterError, StabilityError

__all__ = [
    "BilinearSystem",
    "ControlSignal",
    "U0Mask",
    "ErrorSystem",
    "validate",
    "rescale",
    "gamma_threshold",
    "build_error_system",
    "u0_mask",
    "save_bundle",
    "load_bundle",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BilinearSystem:
    """Immutable container for the coefficient matrices (A, B, C, {N_k}).

    Construction only coerces the entries to read-only float arrays; it does
    not reject inconsistent shapes or non-finite entries, so that systems read
    from disk can be inspected.  Use :func:`validate` to obtain diagnostics.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", _freeze(np.atleast_2d(self.A)))
        object.__setattr__(self, "B", _freeze(np.atleast_2d(self.B)))
        object.__setattr__(self, "C", _freeze(np.atleast_2d(self.C)))
        object.__setattr__(self, "N", tuple(_freeze(np.atleast_2d(Nk)) for Nk in self.N))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def active_channels(self) -> np.ndarray:
        """Indices k with N_k nonzero (exact Frobenius-norm test)."""
        return np.flatnonzero(u0_mask(self).active)

    def require_valid(self) -> "BilinearSystem":
        problems = validate(self)
        if problems:
            raise DimensionError("; ".join(problems))
        return self


@dataclass(frozen=True)
class U0Mask:
    """Boolean mask of control channels whose bilinear coupling N_k is nonzero.

    Only these channels contribute to the exponential factor of the output
    bounds.  Detection uses an exact zero test on ||N_k||_F so the mask is
    reproducible; the bounds depend on it discontinuously.
    """

    active: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.active, dtype=bool)
        a.flags.writeable = False
        object.__setattr__(self, "active", a)


@dataclass(frozen=True)
class ControlSignal:
    """Control input u as a callable with a finite support horizon.

    ``fn`` is evaluated for t in [0, horizon]; for t > horizon the signal is
    exactly zero.  ``grid_hint`` suggests a resolution to integrators and
    quadratures.
    """

    fn: Callable[[float], np.ndarray]
    m: int
    horizon: float
    grid_hint: float = 1e-3

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ParameterError(f"control horizon must be >= 0, got {self.horizon}")
        probe = np.asarray(self.fn(0.0), dtype=float).reshape(-1)
        if probe.shape != (self.m,):
            raise DimensionError(
                f"control callable returned shape {probe.shape}, expected ({self.m},)"
            )
        if not np.all(np.isfinite(probe)):
            raise ParameterError("control callable returned non-finite values at t=0")

    def __call__(self, t: float) -> np.ndarray:
        if t > self.horizon:
            return np.zeros(self.m)
        return np.asarray(self.fn(t), dtype=float).reshape(self.m)

    @staticmethod
    def zero(m: int) -> "ControlSignal":
        return ControlSignal(fn=lambda t, _z=np.zeros(m): _z, m=m, horizon=0.0)

    @staticmethod
    def from_samples(times: np.ndarray, values: np.ndarray, grid_hint: float = 1e-3) -> "ControlSignal":
        """Wrap sampled data (times ascending, values of shape (len(times), m))
        with channel-wise linear interpolation; zero after the last sample."""
        times = np.asarray(times, dtype=float)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] != times.size:
            raise DimensionError("sample count mismatch between times and values")
        if times.size < 2 or np.any(np.diff(times) <= 0):
            raise ParameterError("sample times must be strictly increasing, length >= 2")
        m = values.shape[1]

        def interp(t: float) -> np.ndarray:
            return np.array([np.interp(t, times, values[:, k]) for k in range(m)])

        return ControlSignal(fn=interp, m=m, horizon=float(times[-1]), grid_hint=grid_hint)

    def scaled(self, factor: float) -> "ControlSignal":
        """The signal factor * u with the same horizon."""
        return ControlSignal(
            fn=lambda t: factor * self.fn(t), m=self.m, horizon=self.horizon,
            grid_hint=self.grid_hint,
        )


@dataclass(frozen=True)
class ErrorSystem:
    """Augmented system whose output is y - y_hat for a (full, reduced) pair.

    The state stacks the full state over the reduced one; A and N_k are block
    diagonal, B stacks the input matrices, and C = [C, -C_hat].  ``split`` is
    the full-system order n at which the blocks separate.
    """

    system: BilinearSystem
    split: int


def validate(sys: BilinearSystem) -> list[str]:
    """Check the structural invariants and return one diagnostic per violation.

    Returns an empty list when the system is well formed.  Never raises.
    """
    out: list[str] = []
    n = sys.A.shape[0]
    if sys.A.shape != (n, n):
        out.append(f"A must be square, got {sys.A.shape}")
    if sys.B.ndim != 2 or sys.B.shape[0] != n:
        out.append(f"B must have {n} rows, got shape {sys.B.shape}")
    if sys.C.ndim != 2 or sys.C.shape[1] != n:
        out.append(f"C must have {n} columns, got shape {sys.C.shape}")
    if len(sys.N) != sys.m:
        out.append(f"need one N_k per input channel: |N| = {len(sys.N)}, m = {sys.m}")
    for k, Nk in enumerate(sys.N):
        if Nk.shape != (n, n):
            out.append(f"N_{k + 1} must be {n}x{n}, got {Nk.shape}")
    for name, mat in (("A", sys.A), ("B", sys.B), ("C", sys.C)):
        if not np.all(np.isfinite(mat)):
            out.append(f"{name} contains non-finite entries")
    for k, Nk in enumerate(sys.N):
        if not np.all(np.isfinite(Nk)):
            out.append(f"N_{k + 1} contains non-finite entries")
    return out


def u0_mask(sys: BilinearSystem) -> U0Mask:
    """Mask of channels with a nonzero bilinear coupling (exact zero test)."""
    return U0Mask(active=np.array([np.linalg.norm(Nk) > 0.0 for Nk in sys.N]))


def rescale(sys: BilinearSystem, gamma: float) -> BilinearSystem:
    """Input scaling: replace (B, N_k) by (B/gamma, N_k/gamma).

    The scaled system driven by gamma*u reproduces the original output, while
    the bilinear couplings shrink, which restores mean-square stability for
    gamma large enough.  The caller is responsible for pairing the result
    with the scaled control.
    """
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return BilinearSystem(
        A=sys.A, B=sys.B / gamma, C=sys.C, N=tuple(Nk / gamma for Nk in sys.N)
    )


def _expm_norm_sq(A: np.ndarray) -> Callable[[float], float]:
    """t -> ||e^{At}||_2^2, specialized for symmetric / diagonalizable A."""
    if np.linalg.norm(A - A.T) <= 1e-12 * max(1.0, np.linalg.norm(A)):
        lam_max = float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())
        return lambda t: float(np.exp(2.0 * lam_max * t))
    lam, V = np.linalg.eig(A)
    if np.linalg.cond(V) < 1e8:
        Vinv = np.linalg.inv(V)

        def via_eig(t: float) -> float:
            E = (V * np.exp(lam * t)) @ Vinv
            return float(np.linalg.norm(E, 2) ** 2)

        return via_eig
    return lambda t: float(np.linalg.norm(scipy.linalg.expm(A * t), 2) ** 2)


def gamma_threshold(sys: BilinearSystem) -> float:
    """Sufficient input-scaling threshold for mean-square stability.

    Returns sqrt(sum_k ||N_k||_2^2 * I) with I the integral of ||e^{At}||_2^2
    over [0, inf); any gamma strictly above this value makes the rescaled
    system mean-square stable.  The integral is truncated at a horizon T where
    the integrand has decayed below 1e-12 of its initial value and evaluated
    by adaptive quadrature.  Requires A Hurwitz.
    """
    sys.require_valid()
    abscissa = float(np.linalg.eigvals(sys.A).real.max())
    if abscissa >= 0:
        raise StabilityError(f"A is not Hurwitz (spectral abscissa {abscissa:.3e})")
    nsum = sum(np.linalg.norm(Nk, 2) ** 2 for Nk in sys.N)
    if nsum == 0.0:
        return 0.0
    f = _expm_norm_sq(sys.A)
    # double T until the integrand is negligible; e^{At} decays since A is Hurwitz
    T = 1.0 / abs(abscissa)
    f0 = f(0.0)
    while f(T) > 1e-12 * f0 and T < 1e8 / abs(abscissa):
        T *= 2.0
    val, _ = scipy.integrate.quad(f, 0.0, T, epsabs=1e-13, epsrel=1e-10, limit=400)
    return float(np.sqrt(nsum * val))


def build_error_system(full: BilinearSystem, reduced: BilinearSystem) -> ErrorSystem:
    """Stack a full and a reduced system so the output becomes y - y_hat."""
    full.require_valid()
    reduced.require_valid()
    if full.m != reduced.m:
        raise DimensionError(f"input counts differ: {full.m} vs {reduced.m}")
    if full.p != reduced.p:
        raise DimensionError(f"output counts differ: {full.p} vs {reduced.p}")
    n, r = full.n, reduced.n
    Ae = scipy.linalg.block_diag(full.A, reduced.A)
    Be = np.vstack([full.B, reduced.B])
    Ce = np.hstack([full.C, -reduced.C])
    Ne = tuple(
        scipy.linalg.block_diag(Nk, Nhk) for Nk, Nhk in zip(full.N, reduced.N)
    )
    return ErrorSystem(system=BilinearSystem(A=Ae, B=Be, C=Ce, N=Ne), split=n)


# ---------------------------------------------------------------------------
# System bundles on disk: a JSON manifest next to MatrixMarket files.

_MANIFEST = "system.json"


def save_bundle(sys: BilinearSystem, directory: str) -> str:
    """Write a system bundle: system.json plus one .mtx file per matrix.

    All-zero N_k matrices are recorded as the literal string "zero" instead of
    a file.  Returns the manifest path.
    """
    os.makedirs(directory, exist_ok=True)
    mmwrite(os.path.join(directory, "A.mtx"), sys.A)
    mmwrite(os.path.join(directory, "B.mtx"), sys.B)
    mmwrite(os.path.join(directory, "C.mtx"), sys.C)
    entries: list[str] = []
    for k, Nk in enumerate(sys.N):
        if np.linalg.norm(Nk) == 0.0:
            entries.append("zero")
        else:
            name = f"N{k + 1}.mtx"
            mmwrite(os.path.join(directory, name), Nk)
            entries.append(name)
    manifest = {
        "n": sys.n, "m": sys.m, "p": sys.p,
        "A": "A.mtx", "B": "B.mtx", "C": "C.mtx", "N": entries,
    }
    path = os.path.join(directory, _MANIFEST)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _read_matrix(directory: str, name: str) -> np.ndarray:
    mat = mmread(os.path.join(directory, name))
    if not isinstance(mat, np.ndarray):
        mat = mat.toarray()
    return np.asarray(mat, dtype=float)


def load_bundle(directory: str) -> BilinearSystem:
    """Read a system bundle written by :func:`save_bundle`."""
    path = os.path.join(directory, _MANIFEST)
    if not os.path.exists(path):
        raise ParameterError(f"no system manifest at {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    n = int(manifest["n"])
    A = _read_matrix(directory, manifest["A"])
    B = _read_matrix(directory, manifest["B"])
    C = _read_matrix(directory, manifest["C"])
    N = tuple(
        np.zeros((n, n)) if entry == "zero" else _read_matrix(directory, entry)
        for entry in manifest["N"]
    )
    sys = BilinearSystem(A=A, B=B, C=C, N=N)
    problems = validate(sys)
    if problems:
        raise DimensionError(f"bundle {directory} is inconsistent: " + "; ".join(problems))
    if (sys.n, sys.m, sys.p) != (n, int(manifest["m"]), int(manifest["p"])):
        raise DimensionError(
            f"bundle {directory}: manifest dims {(manifest['n'], manifest['m'], manifest['p'])} "
            f"do not match matrices {(sys.n, sys.m, sys.p)}"
        )
    return sys
