"""Modified wild bootstrap inference for linear regressions with many controls."""

from .bootstrap import (
    AdjustmentFactor,
    BootstrapConfig,
    BootstrapOutcome,
    adjustment_factor,
    appendix_identity_check,
    percentile_bootstrap_test,
    restricted_residuals,
    score_bootstrap_test,
    wild_bootstrap_test,
)
from .estimators import (
    FitResult,
    TestResult,
    fit_ols,
    robust_fit,
    t_test,
    variance_hc0,
    variance_hca,
    variance_hck,
)
from .projection import (
    Dataset,
    PartialledRegressors,
    ProjectionContext,
    apply_annihilator,
    build_projection,
    constrained_ols,
    partial_out,
    restricted_gamma,
)
from .rng import StreamKey, derive

__version__ = "0.1.0"

__all__ = [
    "AdjustmentFactor",
    "BootstrapConfig",
    "BootstrapOutcome",
    "Dataset",
    "FitResult",
    "PartialledRegressors",
    "ProjectionContext",
    "StreamKey",
    "TestResult",
    "adjustment_factor",
    "appendix_identity_check",
    "apply_annihilator",
    "build_projection",
    "constrained_ols",
    "derive",
    "fit_ols",
    "partial_out",
    "percentile_bootstrap_test",
    "restricted_gamma",
    "restricted_residuals",
    "robust_fit",
    "score_bootstrap_test",
    "t_test",
    "variance_hc0",
    "variance_hca",
    "variance_hck",
    "wild_bootstrap_test",
]
