"""Random transition ensembles, their spectra, and tabular reward-transfer diagnostics."""
__version__ = "0.1.0"

from .calibration import Constants, calibrate, load_constants
from .ensembles import (
    CenteredMatrices,
    EnsembleSpec,
    InformativeRow,
    TransitionModel,
    build_transition,
    center_and_scale,
    sample_raw,
    sample_transition,
    subtract_identity,
)
from .errors import (
    CalibrationError,
    ConfigurationError,
    DegenerateSampleError,
    DomainError,
    InfiniteVarianceError,
    IterationLimitError,
    NumericError,
    RewardRankError,
)
from .mazeworld import MazeSpec, barrier_masked_ensemble, build_maze_mdp
from .spectra import (
    MPLaw,
    SpectrumReport,
    mp_cdf,
    mp_quantiles,
    mp_stieltjes,
    rank_condition_holds,
    singular_spectrum,
)
from .transferability import (
    ShapingPotential,
    TabularMDP,
    diagnose_transferability,
    run_transfer,
    soft_value_iteration,
)

__all__ = [
    "__version__",
    "Constants",
    "calibrate",
    "load_constants",
    "MazeSpec",
    "barrier_masked_ensemble",
    "build_maze_mdp",
    "build_transition",
    "CalibrationError",
    "center_and_scale",
    "CenteredMatrices",
    "ConfigurationError",
    "DegenerateSampleError",
    "diagnose_transferability",
    "DomainError",
    "EnsembleSpec",
    "InfiniteVarianceError",
    "InformativeRow",
    "IterationLimitError",
    "mp_cdf",
    "mp_quantiles",
    "mp_stieltjes",
    "MPLaw",
    "NumericError",
    "rank_condition_holds",
    "RewardRankError",
    "run_transfer",
    "sample_raw",
    "sample_transition",
    "ShapingPotential",
    "singular_spectrum",
    "soft_value_iteration",
    "SpectrumReport",
    "subtract_identity",
    "TabularMDP",
    "TransitionModel",
]
