"""Exception types shared across the package.

The CLI maps these onto distinct exit codes (config = 2, simulation = 3,
metrics = 4), so raise the most specific type available.
"""


class EpistabError(Exception):
    """Base class for all package errors."""


class ConfigError(EpistabError):
    """Invalid or inconsistent experiment configuration."""


class SimulationError(EpistabError):
    """Signal synthesis or scan execution failed."""


class DegenerateModelError(SimulationError):
    """Navigator model is rank deficient (condition number too high)."""


class TrajectoryOrderError(SimulationError):
    """Volumes do not repeat the same trajectory ordering; peer-based
    correction is inapplicable."""


class MetricError(EpistabError):
    """Metric computation rejected its input."""
