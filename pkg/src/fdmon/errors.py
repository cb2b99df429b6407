"""Exception hierarchy shared by the fdmon modules."""


class FdmonError(Exception):
    """Base class for all fdmon errors."""


class ParameterError(FdmonError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(FdmonError):
    """Input data carries too little information for the requested operation."""


class ConvergenceError(FdmonError):
    """An iterative routine stopped before meeting its tolerance.

    ``diagnostics`` holds whatever the routine knew when it gave up
    (sweeps run, last rotation angle, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ScalingDegenerateError(FdmonError):
    """A diagonal entry of the mixing estimate is too small to rescale by."""


class CalibrationError(FdmonError):
    """A calibration capture does not contain a usable active source."""
