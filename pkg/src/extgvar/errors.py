"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the command line
front end can report ``<code>: <message>`` on a single line.
"""


class GvarError(ValueError):
    code = "error"


class DomainError(GvarError):
    """An argument lies outside the domain of the operation."""
    code = "domain"


class SingularMatrixError(GvarError):
    """A matrix that must be invertible is (numerically) singular."""
    code = "singular"


class InsufficientSampleError(GvarError):
    code = "insufficient-sample"


class DegenerateMeasureError(GvarError):
    """The measure has ``psi_k = 0``; certificates are undefined."""
    code = "degenerate-measure"


class DegenerateInputError(GvarError):
    """The candidate set cannot support a measure with ``psi_k > 0``."""
    code = "degenerate-input"


class TooLargeError(GvarError):
    code = "too-large"


class UsageError(GvarError):
    """Unknown or malformed command-line arguments."""
    code = "usage"


class CrossCheckError(GvarError):
    """Two independent computations of the same quantity disagree."""
    code = "cross-check"
