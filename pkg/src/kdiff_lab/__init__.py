"""Numerical laboratory for optimal diffusion prediction targets.

Closed-form equilibrium weights and losses for a single-layer linear
diffusion model, the dimension-driven optimal target parameter, learning
dynamics to verify them, a trainer with a learnable target parameter, and
ODE samplers for the learned velocity field.
"""

from .analytic import (
    ColoredLoss,
    DimensionPair,
    MomentSet,
    OptimalLoss,
    Spectrum,
    argmin_k,
    colored_mode_coefficients,
    colored_mode_losses,
    colored_optimal_k,
    colored_optimal_loss,
    colored_optimal_weight,
    compute_moments,
    optimal_k,
    optimal_loss,
    optimal_loss_poly,
    optimal_weight_coeffs,
)
from .errors import (
    ConfigError,
    DegenerateTarget,
    DimError,
    Divergence,
    KDiffLabError,
    NonFiniteLoss,
    NonFiniteState,
    QuadratureDivergence,
    SingularEquilibrium,
)
from .geometry import (
    ColoredCovariance,
    ManifoldBasis,
    random_orthonormal_basis,
    sample_colored,
    sample_data,
    sample_noise,
)
from .kdiff import (
    KParam,
    OptimizerState,
    PureLinear,
    TrainConfig,
    TrainHistory,
    TwoLayer,
    k_value,
    make_kparam,
    optimizer_step,
    train,
    training_step,
    u_to_v,
)
from .lindyn import (
    FlowConfig,
    FlowRecord,
    ModeDecomposition,
    decompose,
    equilibrium_weight,
    exact_gradient,
    monte_carlo_loss,
    quadratic_loss,
    run_gradient_flow,
    stability_bound,
    stochastic_gradient,
)
from .sampler import SampleRun, euler_step, heun_step, integrate, run_sampler
from .schedule import (
    EPSILON_LOSS,
    EPSILON_TARGET,
    FLOW_MATCHING,
    U_LOSS,
    UNIFORM_MEASURE,
    V_LOSS,
    V_TARGET,
    X_LOSS,
    X_TARGET,
    LossTargetSpec,
    ProcessSpec,
    TargetSpec,
    TimeMeasure,
    effective_weight,
    k_target,
    kappa,
    logit_normal_measure,
    make_kappa,
    sample_t,
    uniform_measure,
)
from .seeding import derive_rng

__all__ = [
    "ColoredCovariance",
    "ColoredLoss",
    "ConfigError",
    "DegenerateTarget",
    "DimError",
    "DimensionPair",
    "Divergence",
    "EPSILON_LOSS",
    "EPSILON_TARGET",
    "FLOW_MATCHING",
    "FlowConfig",
    "FlowRecord",
    "KDiffLabError",
    "KParam",
    "LossTargetSpec",
    "ManifoldBasis",
    "ModeDecomposition",
    "MomentSet",
    "NonFiniteLoss",
    "NonFiniteState",
    "OptimalLoss",
    "OptimizerState",
    "ProcessSpec",
    "PureLinear",
    "QuadratureDivergence",
    "SampleRun",
    "SingularEquilibrium",
    "Spectrum",
    "TargetSpec",
    "TimeMeasure",
    "TrainConfig",
    "TrainHistory",
    "TwoLayer",
    "U_LOSS",
    "UNIFORM_MEASURE",
    "V_LOSS",
    "V_TARGET",
    "X_LOSS",
    "X_TARGET",
    "argmin_k",
    "colored_mode_coefficients",
    "colored_mode_losses",
    "colored_optimal_k",
    "colored_optimal_loss",
    "colored_optimal_weight",
    "compute_moments",
    "decompose",
    "derive_rng",
    "effective_weight",
    "equilibrium_weight",
    "euler_step",
    "exact_gradient",
    "heun_step",
    "integrate",
    "k_target",
    "k_value",
    "kappa",
    "logit_normal_measure",
    "make_kparam",
    "make_kappa",
    "monte_carlo_loss",
    "optimal_k",
    "optimal_loss",
    "optimal_loss_poly",
    "optimal_weight_coeffs",
    "optimizer_step",
    "quadratic_loss",
    "random_orthonormal_basis",
    "run_gradient_flow",
    "run_sampler",
    "sample_colored",
    "sample_data",
    "sample_noise",
    "sample_t",
    "stability_bound",
    "stochastic_gradient",
    "train",
    "training_step",
    "u_to_v",
    "uniform_measure",
]
