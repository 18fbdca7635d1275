"""Exception hierarchy.

Two families matter for the CLI: :class:`InputError` maps to exit code 2
(unusable input), :class:`NumericError` to exit code 3 (a numeric procedure
failed or is undefined for the data at hand).
"""


class InputError(ValueError):
    """Malformed files, invalid parameters, or not enough data to proceed."""


class NumericError(RuntimeError):
    """A numeric procedure failed or its result is undefined."""


class ParseError(InputError):
    """A row of an input file could not be parsed; the message names the line."""


class StructureError(InputError):
    """Input violates structural requirements (duplicate or non-monotone dates)."""


class InsufficientDataError(InputError):
    """Too few usable values for the requested fit or statistic."""


class NoTrialsError(InputError):
    """No day qualifies as a forecast instance for the given threshold."""


class MissingCalibrationError(InputError):
    """The calibration window preceding a forecast year is not covered by data."""


class SingularFitError(NumericError):
    """Least-squares design is rank deficient or too ill-conditioned to solve."""


class DegenerateDataError(NumericError):
    """Data with zero variance (or similar degeneracy) makes the result undefined."""


class NonstationaryError(NumericError):
    """AR coefficients describe a non-stationary process."""


class DegenerateTrialsError(NumericError):
    """All trials share one outcome class, so ROC statistics are undefined."""


class UndefinedSkillError(NumericError):
    """The reference score is zero, so a skill score cannot be formed."""


class QuadratureError(NumericError):
    """Adaptive quadrature did not converge; carries the best estimate reached."""

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class NotAForecastInstance(Exception):
    """Signal that no forecast is issued because the current value is above threshold."""
