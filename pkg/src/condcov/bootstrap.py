"""Block and moving-block bootstrap confidence bands for covariance fields.

Pipeline: :func:`build_block_plan` -> :func:`bootstrap_ensemble` (kappa
replicates, each resampled, re-fit and evaluated on a fixed grid) ->
:func:`confidence_band` (normal approximation centred on the original
estimate).

Replicates are never materialised as resampled series.  A replicate is the
list of drawn row ranges; fitting with the implied row multiplicities gives
the same estimate as fitting on the concatenated rows, and lets the kernel
matrices be computed once per dataset.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._accel import kernels
from ._rng import check_seed, substream
from .data import BlockPlan, ConfidenceBand, ConfoundedSeries, CovarianceField, EvaluationGrid, validate_series
from .errors import (
    EmptyCalendarBlocks,
    EstimationError,
    GridMismatch,
    InsufficientReplicates,
    SpanTooLarge,
    TooManyFailures,
    ValidationError,
)
from .estimation import (
    EstimatorConfig,
    correlation_matrices,
    covariance_from_residuals,
    covariance_to_correlation,
    interpolate_mean,
    local_fit,
    mean_grid_points,
    solve_local_sums,
    weight_floor,
)

logger = logging.getLogger(__name__)

CALENDAR_UNITS = {"day": 86_400, "week": 7 * 86_400}
# 1970-01-01 was a Thursday; shift so calendar weeks start on Monday
_WEEK_OFFSET_DAYS = 3
# kernel / prefix-sum caches above this many float64 cells are recomputed on the fly
CACHE_CELLS = 1 << 25
FAILURE_LIMIT = 0.5


@dataclass(frozen=True)
class BootstrapConfig:
    mode: str = "disjoint"
    span: int | str = "day"
    replicates: int = 100
    alpha: float = 0.05
    seed: int = 0
    method: str = "normal"

    def __post_init__(self) -> None:
        if self.mode not in ("disjoint", "moving"):
            raise ValidationError(f"unknown bootstrap mode {self.mode!r}")
        if isinstance(self.span, str):
            if self.span not in CALENDAR_UNITS:
                raise ValidationError(f"span must be a row count or one of {sorted(CALENDAR_UNITS)}")
        elif int(self.span) < 1:
            raise ValidationError("span must be >= 1")
        if int(self.replicates) < 2:
            raise ValidationError("replicates must be >= 2")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.method not in ("normal", "percentile"):
            raise ValidationError(f"unknown band method {self.method!r}")
        check_seed(self.seed)


def _calendar_ids(timestamps: np.ndarray, unit: str) -> np.ndarray:
    days = np.floor_divide(timestamps, CALENDAR_UNITS["day"])
    if unit == "day":
        return days
    return np.floor_divide(days + _WEEK_OFFSET_DAYS, 7)


def _runs(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = np.flatnonzero(np.diff(ids)) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [ids.size]])
    return starts, stops


def build_block_plan(series: ConfoundedSeries, mode: str, span: int | str) -> BlockPlan:
    """Disjoint or moving blocks of consecutive rows.

    ``span`` is a row count or a calendar unit ("day", "week").  Disjoint
    blocks of L rows keep a short final block; calendar blocks are one block
    per unit actually present.  Moving blocks are {k, ..., k + tau} for
    k = 1..n - tau; a calendar span sets tau + 1 to the median number of rows
    per unit.
    """
    n = series.n
    if isinstance(span, str):
        if span not in CALENDAR_UNITS:
            raise ValidationError(f"unknown calendar unit {span!r}")
        t = series.timestamps
        if n < 2 or int(t[-1] - t[0]) < CALENDAR_UNITS[span]:
            raise EmptyCalendarBlocks(f"timestamps cover less than one {span}")
        starts, stops = _runs(_calendar_ids(t, span))
        typical = int(np.median(stops - starts))
        if mode == "disjoint":
            return BlockPlan(starts, stops, "disjoint", typical, n)
        return build_block_plan(series, "moving", max(typical - 1, 1))
    span = int(span)
    if span < 1:
        raise ValidationError("span must be >= 1")
    if mode == "disjoint":
        if span > n:
            raise SpanTooLarge(f"block length {span} exceeds n = {n}")
        starts = np.arange(0, n, span)
        return BlockPlan(starts, np.minimum(starts + span, n), "disjoint", span, n)
    if mode == "moving":
        if span >= n:
            raise SpanTooLarge(f"tau = {span} must be smaller than n = {n}")
        starts = np.arange(0, n - span)
        return BlockPlan(starts, starts + span + 1, "moving", span, n)
    raise ValidationError(f"unknown bootstrap mode {mode!r}")


def draw_blocks(plan: BlockPlan, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Blocks drawn uniformly with replacement, truncated to exactly n rows.

    Draws ceil(n / mean block length) + 1 blocks, then single extra blocks
    while the total is still short (possible when short blocks dominate).
    Returns 0-based half-open ranges in draw order.
    """
    n, m = plan.n, plan.m
    lengths = plan.lengths
    k = math.ceil(n / float(lengths.mean())) + 1
    picks = rng.integers(0, m, size=k)
    total = int(lengths[picks].sum())
    extra = []
    while total < n:
        j = int(rng.integers(0, m))
        extra.append(j)
        total += int(lengths[j])
    if extra:
        picks = np.concatenate([picks, np.array(extra, dtype=picks.dtype)])
    starts = plan.starts[picks].copy()
    stops = plan.stops[picks].copy()
    ends = np.cumsum(stops - starts)
    last = int(np.searchsorted(ends, n))
    starts, stops = starts[: last + 1], stops[: last + 1]
    stops[last] -= int(ends[last]) - n
    return starts, stops


def ranges_to_rows(starts: np.ndarray, stops: np.ndarray) -> np.ndarray:
    return np.concatenate([np.arange(a, b) for a, b in zip(starts.tolist(), stops.tolist())])


def resample_series(series: ConfoundedSeries, plan: BlockPlan, rng: np.random.Generator) -> ConfoundedSeries:
    """One block-bootstrap resample of ``series``; (z_i, x_i) rows move together.

    Timestamps of the result are 1..n since the original calendar has no
    meaning after resampling.
    """
    if plan.n != series.n:
        raise ValidationError("block plan was built for a different series length")
    starts, stops = draw_blocks(plan, rng)
    return series.take(ranges_to_rows(starts, stops), reindex=True)


@dataclass
class Ensemble:
    """Replicate fields stacked as (kappa_ok, G, p, p) plus the failure ledger."""

    grid: EvaluationGrid
    bandwidth: float
    covariances: np.ndarray
    replicate_ids: np.ndarray
    failures: list[tuple[int, str]] = field(default_factory=list)
    correlations: np.ndarray | None = None

    @property
    def requested(self) -> int:
        return self.replicate_ids.size + len(self.failures)

    def fields(self, kind: str = "covariance") -> list[CovarianceField]:
        stack = self.covariances if kind == "covariance" else self.correlations
        return [CovarianceField(self.grid, m, self.bandwidth, kind) for m in stack]


def _interp_weights(points: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left node index and fractional position of each z between mean-grid nodes."""
    if points.size == 1:
        return np.zeros(z.size, dtype=np.int64), np.zeros(z.size)
    lo = np.clip(np.searchsorted(points, z, side="right") - 1, 0, points.size - 2)
    lam = (z - points[lo]) / (points[lo + 1] - points[lo])
    return lo, lam


class ReplicateEngine:
    """Fits one bootstrap replicate from its drawn row ranges.

    Kernel matrices between the grids and the observed z are computed once
    here.  With a mean grid, running sums of the local-regression moments
    over rows are also cached, so a replicate's mean fit costs one
    difference per drawn block instead of a pass over all rows.
    """

    def __init__(self, series: ConfoundedSeries, config: EstimatorConfig, grid: EvaluationGrid):
        validate_series(series)
        self.series = series
        self.config = config
        self.grid = grid
        k = kernels()
        z = np.ascontiguousarray(series.confounder)
        self.z = z
        self.X = np.ascontiguousarray(series.outputs)
        n = series.n
        spec, mspec = config.kernel, config.mean_kernel
        self.Kg = k.kernel_matrix(grid.points, z, spec.bandwidth, spec.code) if grid.size * n <= CACHE_CELLS else None
        self.mean_points = None
        self.Km = None
        self.C = None
        if config.mean_grid is not None:
            self.mean_points = mean_grid_points(z, config.mean_grid)
            M = self.mean_points.size
            self._interp = _interp_weights(self.mean_points, z)
            if M * n <= CACHE_CELLS:
                self.Km = k.kernel_matrix(self.mean_points, z, mspec.bandwidth, mspec.code)
            if M * (n + 1) * (3 + 2 * series.p) <= CACHE_CELLS and self.Km is not None:
                self.C = k.prefix_local_moments(self.Km, z, self.mean_points, self.X)
        elif n * n <= CACHE_CELLS:
            self.Km = k.kernel_matrix(z, z, mspec.bandwidth, mspec.code)

    def _interpolate(self, at_pts: np.ndarray) -> np.ndarray:
        lo, lam = self._interp
        if at_pts.shape[0] == 1:
            return np.repeat(at_pts, lo.size, axis=0)
        return at_pts[lo] + lam[:, None] * (at_pts[lo + 1] - at_pts[lo])

    def fit(self, starts: np.ndarray, stops: np.ndarray) -> np.ndarray:
        k = kernels()
        n, p = self.series.n, self.series.p
        cfg = self.config
        w = k.block_counts(starts, stops, n).astype(np.float64)
        if self.C is not None:
            sums = k.range_sums(self.C, starts, stops)
            at_pts = solve_local_sums(sums, self.mean_points, p, cfg.mean_method, weight_floor(float(n)))
            fitted = self._interpolate(at_pts)
        elif self.mean_points is not None:
            at_pts = local_fit(self.mean_points, self.z, self.X, w, cfg.mean_kernel, cfg.mean_method, self.Km)
            fitted = self._interpolate(at_pts)
        else:
            fitted = local_fit(self.z, self.z, self.X, w, cfg.mean_kernel, cfg.mean_method, self.Km)
        R = np.ascontiguousarray(self.X - fitted)
        return covariance_from_residuals(self.grid, self.z, R, w, cfg.kernel, self.Kg)


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def bootstrap_ensemble(
    series: ConfoundedSeries,
    plan: BlockPlan,
    config: EstimatorConfig,
    grid: EvaluationGrid,
    replicates: int,
    seed: int,
    *,
    correlation: bool = False,
    workers: int | None = None,
    stream_key: tuple[int, ...] = (),
    engine: ReplicateEngine | None = None,
) -> Ensemble:
    """kappa bootstrap replicates of the covariance field on ``grid``.

    Replicate b draws from the substream keyed by (seed, *stream_key, b), so
    the ensemble is identical for any worker count.  Degenerate replicates
    are left out and listed in ``failures``; more than half failing raises
    TooManyFailures.
    """
    if replicates < 2:
        raise ValidationError("replicates must be >= 2")
    if plan.n != series.n:
        raise ValidationError("block plan was built for a different series length")
    engine = engine or ReplicateEngine(series, config, grid)
    G, p = grid.size, series.p
    out = np.full((replicates, G, p, p), np.nan)
    ok = np.zeros(replicates, dtype=bool)
    reasons: dict[int, str] = {}

    def run(b: int) -> None:
        starts, stops = draw_blocks(plan, substream(seed, *stream_key, b))
        try:
            out[b] = engine.fit(starts, stops)
            ok[b] = True
        except EstimationError as exc:
            reasons[b] = str(exc)

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1:
        for b in range(replicates):
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(replicates)))

    failures = sorted(reasons.items())
    if len(failures) > FAILURE_LIMIT * replicates:
        raise TooManyFailures(len(failures), replicates)
    if failures:
        logger.warning("%d of %d replicates degenerate", len(failures), replicates)
    covs = out[ok]
    corrs = correlation_matrices(covs.reshape(-1, p, p))[0].reshape(covs.shape) if correlation else None
    return Ensemble(grid, config.kernel.bandwidth, covs, np.flatnonzero(ok), failures, corrs)


def normal_quantile(alpha: float) -> float:
    """q_{1 - alpha/2} of the standard normal."""
    return float(norm.ppf(1.0 - alpha / 2.0))


def confidence_band(
    estimate,
    ensemble,
    alpha: float,
    *,
    grid: EvaluationGrid | None = None,
    method: str = "normal",
    on_insufficient: str = "raise",
    kind: str | None = None,
    n_failed: int = 0,
) -> ConfidenceBand:
    """Pointwise band from replicate values.

    ``estimate`` is the original-series value per grid point, shape (G, ...)
    or a CovarianceField; ``ensemble`` holds replicate values with shape
    (kappa, G, ...).  The normal band is estimate -/+ q_{1-alpha/2} * sd with
    sd the (kappa - 1)-denominator standard deviation over finite replicates.
    Correlation bands are not clipped to [-1, 1].

    Grid points with fewer than two finite replicates raise
    InsufficientReplicates, or become NaN gaps with ``on_insufficient="gap"``.
    """
    if isinstance(estimate, CovarianceField):
        grid = estimate.grid
        kind = kind or estimate.kind
        estimate = estimate.matrices
    est = np.asarray(estimate, dtype=np.float64)
    vals = np.asarray(ensemble, dtype=np.float64)
    if grid is None:
        grid = EvaluationGrid(np.arange(est.shape[0], dtype=np.float64))
    if vals.ndim != est.ndim + 1 or vals.shape[1:] != est.shape:
        raise ValidationError(f"ensemble shape {vals.shape} does not match estimate {est.shape}")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    finite = np.isfinite(vals)
    count = finite.sum(axis=0)
    short = count < 2
    if short.any() and on_insufficient == "raise":
        g = int(np.argwhere(short)[0][0])
        raise InsufficientReplicates(float(grid.points[g]), int(count.reshape(count.shape[0], -1)[g].min()))
    safe = np.where(finite, vals, 0.0)
    n_safe = np.maximum(count, 2)
    mean = safe.sum(axis=0) / np.maximum(count, 1)
    dev = np.where(finite, vals - mean, 0.0)
    sd = np.sqrt((dev * dev).sum(axis=0) / (n_safe - 1))
    sd = np.where(short, np.nan, sd)
    if method == "normal":
        half = normal_quantile(alpha) * sd
        lower, upper = est - half, est + half
    elif method == "percentile":
        with np.errstate(invalid="ignore"):
            qs = np.nanquantile(np.where(finite, vals, np.nan), [alpha / 2, 1 - alpha / 2], axis=0)
        lower, upper = np.where(short, np.nan, qs[0]), np.where(short, np.nan, qs[1])
    else:
        raise ValidationError(f"unknown band method {method!r}")
    gap = ~np.isfinite(est) | short
    lower, upper = np.where(gap, np.nan, lower), np.where(gap, np.nan, upper)
    return ConfidenceBand(
        grid,
        est,
        sd,
        lower,
        upper,
        float(alpha),
        int(vals.shape[0]),
        method,
        kind or "covariance",
        int(n_failed),
    )


@dataclass
class Coverage:
    per_grid: np.ndarray
    average: float
    datasets: int


def coverage_rate(bands: list[ConfidenceBand], truth) -> Coverage:
    """Fraction of bands containing the truth, per grid cell and averaged over cells.

    A gap (NaN limit) counts as not covering.
    """
    if not bands:
        raise ValidationError("coverage needs at least one band")
    grid = bands[0].grid
    truth = np.asarray(truth, dtype=np.float64)
    hits = np.zeros(bands[0].estimate.shape)
    for band in bands:
        if not band.grid.same_as(grid):
            raise GridMismatch("all bands must share one grid")
        if truth.shape != band.estimate.shape:
            raise GridMismatch(f"truth shape {truth.shape} != band shape {band.estimate.shape}")
        hits += (band.lower <= truth) & (truth <= band.upper)
    per_grid = hits / len(bands)
    return Coverage(per_grid, float(per_grid.mean()), len(bands))


@dataclass
class BandResult:
    """Point estimate, ensemble and bands for one series."""

    mean_method: str
    covariance: CovarianceField
    correlation: CovarianceField
    ensemble: Ensemble
    covariance_band: ConfidenceBand
    correlation_band: ConfidenceBand | None
    plan: BlockPlan


def bootstrap_bands(
    series: ConfoundedSeries,
    estimator: EstimatorConfig,
    boot: BootstrapConfig,
    grid: EvaluationGrid,
    *,
    correlation: bool = True,
    workers: int | None = None,
) -> BandResult:
    """Plan, point estimate, replicate ensemble and bands in one call."""
    plan = build_block_plan(series, boot.mode, boot.span)
    _, cov = estimator.fit(series, grid)
    corr = covariance_to_correlation(cov)
    ens = bootstrap_ensemble(
        series, plan, estimator, grid, boot.replicates, boot.seed, correlation=correlation, workers=workers
    )
    cov_band = confidence_band(
        cov, ens.covariances, boot.alpha, method=boot.method, on_insufficient="gap", n_failed=len(ens.failures)
    )
    corr_band = None
    if correlation:
        corr_band = confidence_band(
            corr, ens.correlations, boot.alpha, method=boot.method, on_insufficient="gap", n_failed=len(ens.failures)
        )
    return BandResult(estimator.mean_method, cov, corr, ens, cov_band, corr_band, plan)
