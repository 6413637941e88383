"""
regimebound: worst-case American option values on regime-switching diffusions
under transition-rate uncertainty, with independent numerical checks.
"""

__version__ = "0.1.0"

from .errors import RegimeBoundError  # noqa: E402
from .extremal import extremal_matrix, pointwise_rates  # noqa: E402
from .model import (  # noqa: E402
    CEV,
    GBM,
    Driftless,
    Monotonicity,
    PayoffSpec,
    ProblemSpec,
    Put,
    RateBoxes,
    RateMatrix,
    Table,
    is_admissible,
    sigma_monotonicity,
    validate_rate_matrix,
)

__all__ = [
    "__version__",
    "RegimeBoundError",
    "extremal_matrix",
    "pointwise_rates",
    "CEV",
    "GBM",
    "Driftless",
    "Monotonicity",
    "PayoffSpec",
    "ProblemSpec",
    "Put",
    "RateBoxes",
    "RateMatrix",
    "Table",
    "is_admissible",
    "sigma_monotonicity",
    "validate_rate_matrix",
]
