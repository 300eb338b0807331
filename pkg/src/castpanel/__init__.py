"""Matrix-completion confidence intervals for treatment effects under staggered adoption."""

__version__ = "0.1.0"

from .errors import (
    CastError,
    ConditioningError,
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    InputError,
    NumericalError,
    RankInfeasibleError,
    UnsupportedDesignError,
)
from .fourblock import (
    CellInference,
    FourBlockFit,
    FourBlockInference,
    FourBlockProblem,
    ResidualMatrix,
    bilinear_ci,
    bilinear_point,
    bilinear_variance,
    cell_ci,
    cell_variance,
    estimate_residuals,
    four_block_conf,
    four_block_estimate,
    oracle_cell_variance,
    variance_grid,
)
from .lowrank import TruncatedSvd, select_rank, truncated_svd
from .staggered import (
    AdoptionSchedule,
    InferenceGrid,
    PanelData,
    StaircasePartition,
    atet,
    build_staircase,
    extract_subproblem,
    ite,
    significance_report,
    staggered_conf,
    weighted_effect,
)
from .synth import (
    ExperimentConfig,
    FactorModelParams,
    SyntheticPanel,
    coverage_experiment,
    fit_factor_model,
    generate_panel,
    power_experiment,
)
