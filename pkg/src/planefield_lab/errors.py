"""Exception hierarchy shared by every module."""


class LabError(Exception):
    """Base class for all errors raised by planefield_lab."""


class PreconditionError(LabError, ValueError):
    """An operation was called with inputs outside its contract."""


class DegenerateInputError(PreconditionError):
    """Linearly dependent vectors, collapsed simplices and similar."""


class InversionError(LabError, ArithmeticError):
    """A restricted form could not be inverted (degenerate restriction)."""


class GeneralPositionViolation(LabError):
    """A plane field and a simplex are not transverse where they must be."""


class RadiiTooLargeError(LabError):
    """Tubular fibers overlap or fail to embed at the requested radii."""


class JiggleFailure(LabError):
    """No admissible vertex displacement was found within the retry budget."""


class ModelConsistencyError(LabError):
    """Two closed-form pieces of a model disagree where they must agree."""


class GenerationError(LabError):
    """A flow could not be integrated to the requested tolerance."""


class EstimationError(LabError):
    """A sampled derivative estimate produced non-finite values."""


class TracingError(LabError):
    """Leaf tracing through a suspension failed."""


class FormatError(LabError, ValueError):
    """A text file does not follow its declared format."""
