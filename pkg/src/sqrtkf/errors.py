"""Exception hierarchy.

Every numerical breakdown is surfaced as one of these; nothing in the
package regularizes a singular factor to keep going.
"""

import numpy as np


class SqrtKFError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SqrtKFError, ValueError):
    pass


class NotPositiveDefinite(SqrtKFError, np.linalg.LinAlgError):
    pass


class SingularMatrix(SqrtKFError, np.linalg.LinAlgError):
    pass


class SingularTriangular(SingularMatrix):
    pass


class SingularPostArray(SingularMatrix):
    """A triangular block of a post-array has a (near) zero diagonal entry."""


class InnovationCovSingular(SingularMatrix):
    """The innovation covariance of the conventional filter lost definiteness."""


class DomainError(SqrtKFError, ValueError):
    """The model is not admissible at the requested parameter value."""


class FilterFailure(SqrtKFError):
    """A filter pass broke down at a given measurement step.

    Attributes
    ----------
    step : int
        1-based index of the measurement being processed.
    cause : Exception
        The underlying numerical error.
    """

    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"filter failed at step {step}: {type(cause).__name__}: {cause}")
