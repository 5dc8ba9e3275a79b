"""Error types raised across the package.

Every error derives from :class:`QSLError` so callers (and the CLI) can tell
operational failures apart from programming mistakes.
"""


class QSLError(Exception):
    """Base class for all package errors."""


class CapacityError(QSLError):
    """Requested Hilbert space is outside the configured size range."""


class PoleGaugeError(QSLError):
    """Point evaluation requested at the gauge-singular pole."""


class DerivativeUnavailableError(QSLError):
    """No analytic gradient and finite differences failed."""


class IntegrationDivergedError(QSLError):
    """A classical flow produced non-finite values."""


class IntegrationQualityError(QSLError):
    """A quantum propagator drifted away from unitarity."""


class InvalidRegionError(QSLError):
    """A region sample set is empty or malformed."""


class ChartOverflowError(QSLError):
    """An object leaves the chart domain (or the scale factor degenerates)."""


class DimensionMismatchError(QSLError):
    """Two operators or states live on spaces of different dimension."""


class InvalidStateError(QSLError):
    """A density operator or classical state fails validation."""


class UndefinedOverlapError(QSLError):
    """Overlap ratio requested for a zero operator or zero function."""


class HypothesisViolatedError(QSLError):
    """The overlap comparison bound needs b*hbar < 1."""


class InsufficientSamplesError(QSLError):
    """Too few points for a decay fit or a microsupport probe."""


class DegenerateIntervalError(QSLError):
    """Plateau endpoints are not strictly ordered."""


class BracketingError(QSLError):
    """Root bracketing failed during profile construction."""


class ProfileRangeError(QSLError):
    """Profile parameter outside its admissible range."""


class DivisibilityError(QSLError):
    """k is not a multiple of the circle's minimal level."""


class EmptyGridError(QSLError):
    """A grid superposition has no lattice points in its chart."""


class ConfigError(QSLError):
    """Experiment configuration failed validation."""


class UnknownExperimentError(QSLError):
    """No experiment registered under the requested id."""


class CalibrationIndeterminateError(QSLError):
    """All calibration residuals sit at the noise floor."""


class MissingInputsError(QSLError):
    """A report was requested for a directory without results."""
