"""Exception hierarchy shared by all modules."""


class RewardRankError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(RewardRankError, ValueError):
    """Invalid user-supplied configuration (sizes, masks, specs)."""


class DegenerateSampleError(RewardRankError, ValueError):
    """A sampled matrix has a zero or nonpositive row sum."""


class NumericError(RewardRankError, ValueError):
    """Non-finite input to a numerical routine."""


class DomainError(RewardRankError, ValueError):
    """Spectral parameter outside the upper half-plane."""


class IterationLimitError(RewardRankError, RuntimeError):
    """Fixed-point iteration did not converge within the iteration budget."""


class InfiniteVarianceError(RewardRankError, ValueError):
    """Target policy puts mass where the behavior policy has none."""


class CalibrationError(RewardRankError, RuntimeError):
    """Calibration request cannot produce trustworthy constants."""
