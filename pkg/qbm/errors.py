"""Exception hierarchy shared by every module.

``NumericalError`` subclasses map to CLI exit code 3, ``ValidationFailure``
to 4 and ``ConfigError`` to 2.
"""


class QBMError(Exception):
    pass


class ConfigError(QBMError):
    pass


class NumericalError(QBMError):
    pass


class ValidationFailure(QBMError):
    pass


class PoleError(NumericalError):
    pass


class BranchCutError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class InterpolationError(NumericalError):
    pass


class NonPositiveSpectrumError(NumericalError):
    pass


class FallbackAccuracyError(NumericalError):
    pass


class SingularTransitionError(NumericalError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class RootFindingError(NumericalError):
    pass


class DegenerateBoundaryError(NumericalError):
    pass


class NoStationaryLimitError(NumericalError):
    pass


class NonPhysicalStateError(NumericalError):
    pass


class GridTooCoarseError(NumericalError):
    pass


class OrderUnsupportedError(NumericalError):
    pass


class StabilityError(NumericalError):
    pass


class FactorizationError(NumericalError):
    pass


class BoundViolationError(ValidationFailure):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ApplicabilityWarning(UserWarning):
    pass
