"""Exception types shared across the package."""


class GLRError(Exception):
    """Base class for errors raised by discreteglr."""


class InputError(GLRError, ValueError):
    """Bad schema, data, hypothesis or configuration (CLI exit code 2)."""


class SchemaError(InputError):
    pass


class CodingError(InputError):
    """A value could not be mapped onto the declared levels."""


class DegenerateLevelError(InputError):
    """A declared level has no observations."""


class NumericalError(GLRError, ArithmeticError):
    """Numerical failure during fitting or testing (CLI exit code 3)."""


class SingularDesignError(NumericalError):
    pass


class BandwidthError(NumericalError):
    """Local weighted normal matrix is singular; the bandwidth is too small."""


class PerfectFitError(NumericalError):
    """The unconstrained model leaves no residual variation."""


class ConvergenceWarning(UserWarning):
    pass
