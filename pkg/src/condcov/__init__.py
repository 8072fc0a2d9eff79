"""Conditional covariance estimation with block-bootstrap confidence bands."""

__version__ = "0.1.0"

from ._accel import backend_name, numba_available, set_backend
from .bootstrap import (
    BootstrapConfig,
    bootstrap_bands,
    bootstrap_ensemble,
    build_block_plan,
    confidence_band,
    coverage_rate,
    resample_series,
)
from .data import (
    BlockPlan,
    ConfidenceBand,
    ConfoundedSeries,
    CovarianceField,
    EvaluationGrid,
    MeanField,
    validate_series,
)
from .estimation import (
    EstimatorConfig,
    KernelSpec,
    covariance_to_correlation,
    estimate_conditional_covariance,
    estimate_mean,
    kernel_weight,
    select_bandwidth_cv,
)

__all__ = [
    "BlockPlan",
    "BootstrapConfig",
    "ConfidenceBand",
    "ConfoundedSeries",
    "CovarianceField",
    "EstimatorConfig",
    "EvaluationGrid",
    "KernelSpec",
    "MeanField",
    "backend_name",
    "bootstrap_bands",
    "bootstrap_ensemble",
    "build_block_plan",
    "confidence_band",
    "covariance_to_correlation",
    "coverage_rate",
    "estimate_conditional_covariance",
    "estimate_mean",
    "kernel_weight",
    "numba_available",
    "resample_series",
    "select_bandwidth_cv",
    "set_backend",
    "validate_series",
]
