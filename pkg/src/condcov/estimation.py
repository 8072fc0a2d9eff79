"""Kernel estimators of the conditional mean and conditional covariance.

The covariance estimator is the kernel-weighted average of residual outer
products::

    S(z; h) = sum_i K_h(z_i - z) r_i r_i^T / sum_i K_h(z_i - z),
    r_i = x_i - m(z_i)

evaluated on an :class:`~condcov.data.EvaluationGrid`.  Every estimator
accepts optional row multiplicities ``weights``; fitting with bootstrap
counts is identical to fitting on the resampled series, which lets the
bootstrap reuse kernel evaluations across replicates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._accel import kernels
from .data import ConfoundedSeries, CovarianceField, EvaluationGrid, MeanField, validate_series
from .errors import (
    AllCandidatesDegenerate,
    DegenerateWeights,
    EstimationError,
    SingularLocalFit,
    ValidationError,
    VarianceFloorHit,
)

logger = logging.getLogger(__name__)

KERNEL_FAMILIES = {"gaussian": 0, "epanechnikov": 1}
MEAN_METHODS = ("nadaraya-watson", "local-linear")

WEIGHT_FLOOR_PER_ROW = 1e-12
VARIANCE_FLOOR_REL = 1e-12
# 1 - (weighted corr of 1 and d)^2 below this means the local line is not identified
SINGULAR_REL = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    bandwidth: float = 1.5

    def __post_init__(self) -> None:
        if self.family not in KERNEL_FAMILIES:
            raise ValidationError(f"unsupported kernel family {self.family!r}")
        h = float(self.bandwidth)
        if not (np.isfinite(h) and h > 0):
            raise ValidationError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)

    @property
    def code(self) -> int:
        return KERNEL_FAMILIES[self.family]

    def with_bandwidth(self, h: float) -> KernelSpec:
        return KernelSpec(self.family, h)


def kernel_weight(spec: KernelSpec, u):
    """Unnormalised kernel K_h(u); scalar in, scalar out (arrays broadcast).

    gaussian: exp(-u^2 / (2 h^2)); epanechnikov: max(0, 1 - (u/h)^2).
    """
    t = np.asarray(u, dtype=np.float64) / spec.bandwidth
    if spec.family == "gaussian":
        out = np.exp(-0.5 * (t * t))
    else:
        out = np.maximum(0.0, 1.0 - t * t)
    return float(out) if out.ndim == 0 else out


def weight_floor(total_weight: float) -> float:
    return WEIGHT_FLOOR_PER_ROW * total_weight


def _weights(series: ConfoundedSeries, weights) -> np.ndarray:
    if weights is None:
        return np.ones(series.n)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if w.shape != (series.n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be a nonnegative finite vector of length n")
    return w


def local_fit(points, z, X, w, spec: KernelSpec, method: str, K=None) -> np.ndarray:
    """Kernel regression of the columns of X on z, evaluated at ``points``.

    Returns an (M, p) array.  Raises DegenerateWeights / SingularLocalFit at
    the first offending point.
    """
    if method not in MEAN_METHODS:
        raise ValidationError(f"unknown mean method {method!r}")
    p = X.shape[1]
    sums = kernels().local_sums(points, z, w, X, spec.bandwidth, spec.code, K)
    return solve_local_sums(sums, points, p, method, weight_floor(float(w.sum())))


def solve_local_sums(sums: np.ndarray, points: np.ndarray, p: int, method: str, floor: float) -> np.ndarray:
    s0, s1, s2 = sums[:, 0], sums[:, 1], sums[:, 2]
    t0, t1 = sums[:, 3 : 3 + p], sums[:, 3 + p :]
    low = s0 <= floor
    if low.any():
        g = int(np.flatnonzero(low)[0])
        raise DegenerateWeights(float(points[g]), float(s0[g]), floor)
    if method == "nadaraya-watson":
        return t0 / s0[:, None]
    det = s0 * s2 - s1 * s1
    bad = ~(det > SINGULAR_REL * s0 * s2)
    if bad.any():
        g = int(np.flatnonzero(bad)[0])
        raise SingularLocalFit(float(points[g]))
    return (s2[:, None] * t0 - s1[:, None] * t1) / det[:, None]


def mean_grid_points(z: np.ndarray, size: int) -> np.ndarray:
    lo, hi = float(z.min()), float(z.max())
    if hi == lo:
        return np.array([lo])
    return np.linspace(lo, hi, int(size))


def interpolate_mean(points: np.ndarray, values: np.ndarray, z: np.ndarray) -> np.ndarray:
    if points.size == 1:
        return np.repeat(values, z.size, axis=0)
    return np.column_stack([np.interp(z, points, values[:, k]) for k in range(values.shape[1])])


def estimate_mean(
    series: ConfoundedSeries,
    spec: KernelSpec,
    method: str = "nadaraya-watson",
    weights=None,
    grid_size: int | None = None,
) -> MeanField:
    """Conditional mean m(z_i) at every observed z_i, columnwise.

    nadaraya-watson: kernel-weighted average.  local-linear: intercept of a
    kernel-weighted least-squares line centred at each z.

    With ``grid_size`` the fit is evaluated on that many equally spaced points
    over [min z, max z] and linearly interpolated to the z_i, which turns the
    O(n^2) cost into O(n * grid_size).
    """
    validate_series(series)
    w = _weights(series, weights)
    z, X = series.confounder, series.outputs
    if grid_size is None:
        fitted = local_fit(z, z, X, w, spec, method)
    else:
        if grid_size < 2:
            raise ValidationError("mean grid needs at least 2 points")
        pts = mean_grid_points(z, grid_size)
        fitted = interpolate_mean(pts, local_fit(pts, z, X, w, spec, method), z)
    return MeanField(fitted, method, spec.bandwidth)


def covariance_from_residuals(
    grid: EvaluationGrid, z: np.ndarray, residuals: np.ndarray, w: np.ndarray, spec: KernelSpec, K=None
) -> np.ndarray:
    wsum, S = kernels().outer_sums(grid.points, z, w, residuals, spec.bandwidth, spec.code, K)
    floor = weight_floor(float(w.sum()))
    low = wsum <= floor
    if low.any():
        g = int(np.flatnonzero(low)[0])
        raise DegenerateWeights(float(grid.points[g]), float(wsum[g]), floor)
    return S / wsum[:, None, None]


def estimate_conditional_covariance(
    series: ConfoundedSeries,
    mean: MeanField,
    spec: KernelSpec,
    grid: EvaluationGrid,
    weights=None,
) -> CovarianceField:
    validate_series(series)
    if mean.fitted.shape != series.outputs.shape:
        raise ValidationError("mean field was not fit on this series")
    w = _weights(series, weights)
    R = np.ascontiguousarray(series.outputs - mean.fitted)
    mats = covariance_from_residuals(grid, series.confounder, R, w, spec)
    return CovarianceField(grid, mats, spec.bandwidth, "covariance")


def variance_gaps(variances: np.ndarray) -> np.ndarray:
    """(G, p) mask of variances at or below 1e-12 * max over the grid."""
    floor = VARIANCE_FLOOR_REL * np.max(variances, axis=0, keepdims=True)
    return variances <= floor


def correlation_matrices(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    var = np.diagonal(mats, axis1=1, axis2=2).copy()
    gaps = variance_gaps(var)
    sd = np.sqrt(np.where(gaps, np.nan, var))
    with np.errstate(invalid="ignore"):
        corr = mats / (sd[:, :, None] * sd[:, None, :])
    p = mats.shape[1]
    idx = np.arange(p)
    corr[:, idx, idx] = 1.0
    return corr, gaps


def covariance_to_correlation(field: CovarianceField, strict: bool = False) -> CovarianceField:
    """r_kl = s_kl / sqrt(s_kk s_ll) with an exact unit diagonal.

    Where a variance is at or below the variance floor the affected
    off-diagonal entries are NaN and the cell is flagged in ``gaps``;
    ``strict`` raises VarianceFloorHit instead.
    """
    if field.kind != "covariance":
        raise ValidationError("input field must be a covariance field")
    if np.any(np.diagonal(field.matrices, axis1=1, axis2=2) < 0):
        raise ValidationError("negative variance in covariance field")
    corr, gaps = correlation_matrices(field.matrices)
    if gaps.any():
        g, k = (int(v) for v in np.argwhere(gaps)[0])
        if strict:
            raise VarianceFloorHit(float(field.grid.points[g]), k + 1)
        logger.info("variance floor hit at %d grid cell(s)", int(gaps.sum()))
    return CovarianceField(field.grid, corr, field.bandwidth, "correlation", gaps)


def correlation_to_covariance(field: CovarianceField, variances: np.ndarray) -> CovarianceField:
    """Inverse of covariance_to_correlation given the (G, p) variances."""
    if field.kind != "correlation":
        raise ValidationError("input field must be a correlation field")
    sd = np.sqrt(np.asarray(variances, dtype=np.float64))
    mats = field.matrices * sd[:, :, None] * sd[:, None, :]
    p = field.p
    idx = np.arange(p)
    mats[:, idx, idx] = variances
    return CovarianceField(field.grid, mats, field.bandwidth, "covariance")


def fit_field(
    series: ConfoundedSeries,
    spec: KernelSpec,
    grid: EvaluationGrid,
    mean_method: str = "nadaraya-watson",
    mean_spec: KernelSpec | None = None,
    mean_grid: int | None = None,
    weights=None,
) -> tuple[MeanField, CovarianceField]:
    """Mean fit followed by the conditional covariance on ``grid``."""
    mean = estimate_mean(series, mean_spec or spec, mean_method, weights, mean_grid)
    return mean, estimate_conditional_covariance(series, mean, spec, grid, weights)


@dataclass(frozen=True)
class EstimatorConfig:
    """Everything needed to turn a series into a covariance field."""

    kernel: KernelSpec = field(default_factory=KernelSpec)
    mean_method: str = "local-linear"
    mean_bandwidth: float | None = None
    mean_grid: int | None = None

    def __post_init__(self) -> None:
        if self.mean_method not in MEAN_METHODS:
            raise ValidationError(f"unknown mean method {self.mean_method!r}")
        if self.mean_grid is not None and self.mean_grid < 2:
            raise ValidationError("mean grid needs at least 2 points")

    @property
    def mean_kernel(self) -> KernelSpec:
        if self.mean_bandwidth is None:
            return self.kernel
        return self.kernel.with_bandwidth(self.mean_bandwidth)

    def fit(self, series: ConfoundedSeries, grid: EvaluationGrid, weights=None) -> tuple[MeanField, CovarianceField]:
        return fit_field(series, self.kernel, grid, self.mean_method, self.mean_kernel, self.mean_grid, weights)


@dataclass
class BandwidthSelection:
    bandwidth: float
    scores: dict[float, float] = field(default_factory=dict)
    folds: int = 0


def _cv_score(series: ConfoundedSeries, spec: KernelSpec, mean_method: str, fold_ids: np.ndarray, folds: int) -> float:
    z, X = series.confounder, series.outputs
    total = 0.0
    for f in range(folds):
        test = fold_ids == f
        w = (~test).astype(np.float64)
        m_hat = local_fit(z, z, X, w, spec, mean_method)
        R = np.ascontiguousarray(X - m_hat)
        zt = z[test]
        wsum, S = kernels().outer_sums(zt, z, w, R, spec.bandwidth, spec.code, None)
        floor = weight_floor(float(w.sum()))
        if np.any(wsum <= floor):
            g = int(np.flatnonzero(wsum <= floor)[0])
            raise DegenerateWeights(float(zt[g]), float(wsum[g]), floor)
        pred = S / wsum[:, None, None]
        r = R[test]
        total += float(np.sum((r[:, :, None] * r[:, None, :] - pred) ** 2))
    return total


def select_bandwidth_cv(
    series: ConfoundedSeries,
    candidates,
    mean_method: str = "nadaraya-watson",
    folds: int = 5,
    family: str = "gaussian",
) -> BandwidthSelection:
    """K-fold cross-validated bandwidth for mean + covariance.

    Folds are contiguous runs of rows in time order.  The score of h is the
    summed squared Frobenius distance between each held-out residual outer
    product and the covariance predicted from the other folds.  Candidates
    that hit a degenerate fit on any fold score +inf; ties go to the larger h.
    """
    validate_series(series)
    cands = sorted({float(h) for h in candidates})
    if not cands:
        raise ValidationError("at least one candidate bandwidth is required")
    if not 2 <= folds <= series.n:
        raise ValidationError(f"folds must lie in [2, {series.n}], got {folds}")
    fold_ids = np.empty(series.n, dtype=np.int64)
    for f, idx in enumerate(np.array_split(np.arange(series.n), folds)):
        fold_ids[idx] = f
    scores: dict[float, float] = {}
    for h in cands:
        spec = KernelSpec(family, h)
        try:
            scores[h] = _cv_score(series, spec, mean_method, fold_ids, folds)
        except EstimationError as exc:
            logger.info("bandwidth %g degenerate: %s", h, exc)
            scores[h] = float("inf")
    best = min(scores.values())
    if not np.isfinite(best):
        raise AllCandidatesDegenerate("every candidate bandwidth produced a degenerate fit")
    tol = 1e-12 * abs(best)
    chosen = max(h for h, s in scores.items() if s <= best + tol)
    return BandwidthSelection(chosen, scores, folds)
