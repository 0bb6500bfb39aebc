"""Exception types raised across the package."""


class IRLError(Exception):
    """Base class for all package errors."""


class DimensionError(IRLError, ValueError):
    """An array does not have the shape the model or basis expects."""


class AssumptionViolated(IRLError):
    """The baseline input is not strictly inside the constraint window."""


class SaturationExceeded(IRLError, ValueError):
    """A virtual input lies on or beyond its saturation scale."""


class ConstraintViolation(IRLError):
    """A policy produced an input outside the admissible virtual interval."""


class DivergenceError(IRLError):
    """A rollout produced a non-finite state."""


class RankDeficient(IRLError):
    """The regularized least-squares system is numerically singular."""


class NearSingular(IRLError):
    """The heading-rate coefficient of the relative dynamics is too close to zero."""


class DegenerateGeometry(IRLError, ValueError):
    """The planar range between the vehicle and the target is zero."""


class ConfigError(IRLError, ValueError):
    """An experiment configuration file is malformed or inconsistent."""
