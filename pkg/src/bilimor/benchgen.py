"""Benchmark generators: a two-state demo system, its normalized control,
a 2-d heat transfer benchmark with boundary control, and seeded random
stable systems.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .sysmodel import BilinearSystem, ControlSignal

__all__ = [
    "HeatBenchSpec",
    "toy_system",
    "toy_control",
    "heat2d",
    "random_stable_system",
]


def toy_system() -> BilinearSystem:
    """Two-state demo: one bilinear channel, one plain input channel.

    A = [[-2, 1], [1, -2]], N1 = [[0, 1], [0.5, 0]], N2 = 0, B = I, C = [1, 1].
    Mean-square stable as given, so no input scaling is needed.
    """
    return BilinearSystem(
        A=np.array([[-2.0, 1.0], [1.0, -2.0]]),
        B=np.eye(2),
        C=np.array([[1.0, 1.0]]),
        N=(np.array([[0.0, 1.0], [0.5, 0.0]]), np.zeros((2, 2))),
    )


def _toy_profile(t: float) -> np.ndarray:
    return np.array([np.exp(-t), np.sin(np.pi * t) * np.exp(t)])


@lru_cache(maxsize=1)
def _toy_profile_l2() -> float:
    # ||ubar||_L2 over [0, 1], adaptive Simpson at 1e-10 relative
    from .bounds import _adaptive_simpson

    val = _adaptive_simpson(lambda t: float(_toy_profile(t) @ _toy_profile(t)),
                            0.0, 1.0, rtol=1e-10)
    return float(np.sqrt(val))


def toy_control(alpha: float) -> ControlSignal:
    """Normalized demo control of energy alpha on the support [0, 1].

    u(t) = alpha * (e^{-t}, sin(pi t) e^t) / ||.||_L2 for t in [0, 1] and zero
    afterwards, so ||u||_L2 = alpha; only the first channel drives the demo
    system's bilinear term.
    """
    if alpha < 0:
        raise ParameterError(f"control energy alpha must be >= 0, got {alpha}")
    scale = alpha / _toy_profile_l2()
    return ControlSignal(fn=lambda t: scale * _toy_profile(t), m=2, horizon=1.0)


@dataclass(frozen=True)
class HeatBenchSpec:
    """Discretized heat transfer benchmark on the unit square.

    ``nn`` interior nodes per axis, n = nn^2 unknowns, mesh width
    h = 1 / (nn + 1).  The output is the mean temperature.
    """

    nn: int
    n: int
    h: float
    system: BilinearSystem


def heat2d(nn: int) -> HeatBenchSpec:
    """Finite-difference heat equation with one controlled Robin edge.

    Unknowns are the interior values X_{ij} at (i*h, j*h), i, j = 1..nn,
    h = 1/(nn+1), numbered row-major in i (x index) with j (y index) fastest.
    The five-point Laplacian is scaled by 1/h^2.  Boundary handling:

    * left edge x = 0: Robin flux dX/dn = u1 (X - 1), discretized one-sided
      with the state factor taken at the adjacent node, which keeps the model
      bilinear.  The ghost value X0 = X1 + h u1 (X1 - 1) folds into the
      stencil as +1/h^2 on the diagonal of A, +1/h on the diagonal of N1, and
      -1/h in the first input column b1 for every edge-adjacent node.
    * right edge x = 1: Dirichlet X = u2, giving +1/h^2 in the second input
      column b2 for adjacent nodes.  N2 = 0.
    * bottom and top edges: homogeneous Dirichlet.

    C = (1/n) * [1 ... 1].  A stays symmetric negative definite.
    """
    if nn < 2:
        raise ParameterError(f"mesh must have nn >= 2 interior nodes per axis, got {nn}")
    h = 1.0 / (nn + 1)
    n = nn * nn
    A = np.zeros((n, n))
    N1 = np.zeros((n, n))
    b1 = np.zeros(n)
    b2 = np.zeros(n)
    inv_h2 = 1.0 / (h * h)

    def node(i: int, j: int) -> int:
        return (i - 1) * nn + (j - 1)

    for i in range(1, nn + 1):
        for j in range(1, nn + 1):
            k = node(i, j)
            A[k, k] = -4.0 * inv_h2
            if i > 1:
                A[k, node(i - 1, j)] += inv_h2
            else:
                A[k, k] += inv_h2
                N1[k, k] += 1.0 / h
                b1[k] -= 1.0 / h
            if i < nn:
                A[k, node(i + 1, j)] += inv_h2
            else:
                b2[k] += inv_h2
            if j > 1:
                A[k, node(i, j - 1)] += inv_h2
            if j < nn:
                A[k, node(i, j + 1)] += inv_h2
    system = BilinearSystem(
        A=A,
        B=np.column_stack([b1, b2]),
        C=np.full((1, n), 1.0 / n),
        N=(N1, np.zeros((n, n))),
    )
    return HeatBenchSpec(nn=nn, n=n, h=h, system=system)


def random_stable_system(
    n: int,
    m: int,
    p: int,
    seed: int,
    target: str = "mean_square",
    coupling: float = 0.3,
) -> BilinearSystem:
    """Seeded random system meeting a stability target.

    A is a shifted Gaussian matrix with spectral abscissa -0.5; the bilinear
    couplings start at the requested magnitude and are halved until the target
    holds (``hurwitz`` needs no halving).  Deterministic for a given seed.
    """
    from .lyapunov import kron_stability

    if min(n, m, p) < 1:
        raise ParameterError("dimensions must be positive")
    if target not in ("hurwitz", "mean_square"):
        raise ParameterError(f"target must be 'hurwitz' or 'mean_square', got {target!r}")
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((n, n)) / np.sqrt(n)
    A = R - (float(np.linalg.eigvals(R).real.max()) + 0.5) * np.eye(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    N = [coupling * rng.standard_normal((n, n)) / np.sqrt(n) for _ in range(m)]
    sys = BilinearSystem(A=A, B=B, C=C, N=tuple(N))
    if target == "mean_square":
        for _ in range(60):
            if kron_stability(sys).mean_square_stable:
                break
            N = [0.5 * Nk for Nk in N]
            sys = BilinearSystem(A=A, B=B, C=C, N=tuple(N))
    return sys
