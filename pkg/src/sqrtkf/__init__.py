"""Square-root array Kalman filters with exact parameter sensitivities.

The package propagates the square-root covariance (eSRCF) and square-root
information (eSRIF) array filters together with their derivatives with
respect to model parameters, and uses the resulting log-likelihood
gradient for maximum-likelihood identification. A conventional Kalman
filter with Riccati sensitivity equations is included for comparison.
"""

__version__ = "0.1.0"

from .errors import (DimensionMismatch, DomainError, FilterFailure, InnovationCovSingular,
                     NotPositiveDefinite, SingularMatrix, SingularPostArray, SingularTriangular,
                     SqrtKFError)
from .triarray import (cholesky_derivative, cholesky_upper, inverse_derivative, normalize_signs,
                       split_ldu, tri_solve, triangularize_lower, triangularize_upper)
from .sensitivity import (ArrayPartition, post_derivative_lower, post_derivative_upper,
                          self_check_norm)
from .model import (MeasurementLog, ModelEval, ModelSpec, evaluate, example3_spec,
                    polynomial_spec, random_spec, simulate)
from .filters import ENGINES, run
from .likelihood import NegLogLikelihood, accumulate
from .estimator import EstimationResult, OptimizerConfig, estimate, evaluate_pi
from .bench import SweepConfig, SweepReport, run_sweep, verify_lemma_tables

__all__ = [
    "__version__",
    "SqrtKFError", "DimensionMismatch", "DomainError", "FilterFailure", "InnovationCovSingular",
    "NotPositiveDefinite", "SingularMatrix", "SingularPostArray", "SingularTriangular",
    "cholesky_upper", "cholesky_derivative", "inverse_derivative", "split_ldu", "tri_solve",
    "triangularize_upper", "triangularize_lower", "normalize_signs",
    "ArrayPartition", "post_derivative_upper", "post_derivative_lower", "self_check_norm",
    "ModelEval", "ModelSpec", "MeasurementLog", "evaluate", "example3_spec", "polynomial_spec",
    "random_spec", "simulate",
    "ENGINES", "run", "NegLogLikelihood", "accumulate",
    "OptimizerConfig", "EstimationResult", "estimate", "evaluate_pi",
    "SweepConfig", "SweepReport", "run_sweep", "verify_lemma_tables",
]
