"""Model order reduction and output-error bounds for bilinear control systems.

The package covers the full desk-scale workflow: system and control
containers with disk bundles (``sysmodel``), generalized Lyapunov/Sylvester
solvers and stability tests (``lyapunov``), Gramians and H2 quantities
(``gramians``), balancing, truncation, and H2-optimal reduction (``mor``),
output and output-error bounds (``bounds``), deterministic simulation and the
matrix comparison check (``simulate``), Monte Carlo verification of the
stochastic link (``stochastic``), and benchmark generators (``benchgen``).
The ``bilimor`` command line drives reproducible experiment runs.
"""

from .benchgen import HeatBenchSpec, heat2d, random_stable_system, toy_control, toy_system
from .bounds import (
    BoundReport,
    ReachabilityEstimate,
    WeightedBoundResult,
    bt_weighted_bound,
    control_l2_norms,
    output_bound,
    output_error_bound,
    reachability_estimate,
    spa_weighted_bound,
)
from .errors import (
    BilimorError,
    ConsistencyError,
    DimensionError,
    DivergenceError,
    ParameterError,
    RankDeficiencyError,
    SingularityError,
    StabilityError,
)
from .gramians import (
    GramianSet,
    TimeLimitedGramian,
    gramian_set,
    h2_error,
    h2_norm,
    time_limited_gramian,
)
from .lyapunov import (
    StabilityReport,
    kron_stability,
    solve_generalized_lyapunov,
    solve_generalized_sylvester,
    stability_rescale_threshold,
)
from .mor import (
    BalancingTransform,
    ReductionResult,
    apply_transform,
    balance,
    balanced_truncation,
    bilinear_irka,
    optimality_residuals,
    singular_perturbation,
)
from .simulate import (
    GronwallMargins,
    MatrixPath,
    Trajectory,
    decay_envelope_check,
    fundamental_solution,
    gronwall_check,
    integrate_bilinear,
    integrate_matrix_ode,
    make_grid,
    sup_output,
)
from .stochastic import (
    DecayFit,
    MomentPath,
    bilinear_stochastic_domination,
    decay_fit,
    moment_check,
    simulate_sde,
)
from .sysmodel import (
    BilinearSystem,
    ControlSignal,
    ErrorSystem,
    U0Mask,
    build_error_system,
    gamma_threshold,
    load_bundle,
    rescale,
    save_bundle,
    u0_mask,
    validate,
)

__version__ = "0.1.0"
