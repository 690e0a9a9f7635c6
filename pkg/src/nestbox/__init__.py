"""Simulation and statistical verification of nested infinite occupancy schemes."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CoefficientRangeError,
    CovarianceNotPSDError,
    DegenerateScaleError,
    ExactnessError,
    LawPrecisionError,
    NestboxError,
    NoLimitTheoremError,
    NumericError,
    PrefixCapError,
    PrefixMassError,
    QuadratureError,
    TailError,
)
from .laws import (
    FragmentationLaw,
    LawKind,
    LevyParams,
    Prefix,
    StickParams,
    expand_tail,
    gamma_levy,
    gem,
    limit_spec_for,
    mult_subordinator,
    mult_subordinator_gamma,
    pitman_yor,
    poisson_kingman,
    poisson_kingman_gamma,
    sample_prefix,
    stick_beta,
    stick_constant,
    stick_custom,
)
from .limits import (
    CovBase,
    CurveMatrix,
    LimitSpec,
    c_coeff,
    cov_limit,
    cstar_coeff,
    normalize_curves,
    rl_identity_check,
    sample_limit_paths,
)
from .occupancy import (
    CountMode,
    OccupancyConfig,
    OccupancyResult,
    allocate_children,
    ceil_power,
    counting_function,
    simulate,
)
from .rng import mix64, replicate_rng, replicate_seed, substream_seed
from .verify import (
    ExperimentConfig,
    ExperimentReport,
    ToleranceProfile,
    consistency_series,
    run_experiment,
    sup_moment_diagnostic,
)
