"""Immutable data model shared by estimation, bootstrap, simulation and io.

Arrays are stored 0-based and frozen (``writeable=False``) after
construction so instances can be handed to worker threads without copying.
Everything user-facing (error messages, exported block listings) is 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from .errors import GridError, MismatchedLengths, NonFiniteValue, NonMonotoneTime, ValidationError

FieldKind = Literal["covariance", "correlation"]
MeanMethod = Literal["nadaraya-watson", "local-linear"]
BlockMode = Literal["disjoint", "moving"]

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


def _frozen(a: Any, dtype: Any = np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _float_list(a: np.ndarray) -> list:
    """Nested lists with NaN mapped to None; finite floats keep full precision."""
    flat = [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float).ravel()]
    if np.ndim(a) == 0:
        return flat[0]
    return np.array(flat, dtype=object).reshape(np.shape(a)).tolist()


def _from_float_list(data: Any) -> np.ndarray:
    arr = np.array(data, dtype=object)
    return np.where(arr == None, np.nan, arr).astype(np.float64)  # noqa: E711


@dataclass(frozen=True, eq=False)
class ConfoundedSeries:
    """n time-stamped p-dimensional outputs paired with a scalar confounder.

    ``timestamps`` are integer seconds since the Unix epoch.  ``missing_mask``
    (n, p) and ``confounder_missing`` (n,) only exist on freshly loaded data;
    estimation code requires a dense series (see :func:`validate_series`).
    """

    timestamps: np.ndarray
    outputs: np.ndarray
    confounder: np.ndarray
    missing_mask: np.ndarray | None = None
    confounder_missing: np.ndarray | None = None
    output_names: tuple[str, ...] = ()
    confounder_name: str = "z"

    def __post_init__(self) -> None:
        outputs = np.asarray(self.outputs, dtype=np.float64)
        if outputs.ndim == 1:
            outputs = outputs[:, None]
        if outputs.ndim != 2:
            raise ValidationError("outputs must be a 2-d (n, p) array")
        n, p = outputs.shape
        z = np.asarray(self.confounder, dtype=np.float64).ravel()
        t = np.asarray(self.timestamps).ravel()
        if n < 1:
            raise MismatchedLengths("series must contain at least one observation")
        if z.shape[0] != n or t.shape[0] != n:
            raise MismatchedLengths(
                f"outputs have {n} rows, confounder {z.shape[0]}, timestamps {t.shape[0]}"
            )
        object.__setattr__(self, "outputs", _frozen(outputs))
        object.__setattr__(self, "confounder", _frozen(z))
        object.__setattr__(self, "timestamps", _frozen(t, np.int64))
        if self.missing_mask is not None:
            mask = np.asarray(self.missing_mask, dtype=bool)
            if mask.shape != (n, p):
                raise MismatchedLengths(f"missing_mask shape {mask.shape} != {(n, p)}")
            object.__setattr__(self, "missing_mask", _frozen(mask, bool))
        if self.confounder_missing is not None:
            cmask = np.asarray(self.confounder_missing, dtype=bool).ravel()
            if cmask.shape != (n,):
                raise MismatchedLengths("confounder_missing length != n")
            object.__setattr__(self, "confounder_missing", _frozen(cmask, bool))
        names = tuple(self.output_names) or tuple(f"x{k + 1}" for k in range(p))
        if len(names) != p:
            raise MismatchedLengths(f"{len(names)} output names for {p} columns")
        object.__setattr__(self, "output_names", names)
        if n > 1:
            bad = np.flatnonzero(np.diff(self.timestamps) <= 0)
            if bad.size:
                raise NonMonotoneTime(int(bad[0]) + 2)

    @property
    def n(self) -> int:
        return self.outputs.shape[0]

    @property
    def p(self) -> int:
        return self.outputs.shape[1]

    @property
    def has_missing(self) -> bool:
        return bool(
            (self.missing_mask is not None and self.missing_mask.any())
            or (self.confounder_missing is not None and self.confounder_missing.any())
        )

    def take(self, rows: np.ndarray, reindex: bool = False) -> ConfoundedSeries:
        """Rows ``rows`` (0-based) as a new dense series.

        ``reindex`` replaces the timestamps by 1..len(rows), which is required
        whenever ``rows`` repeats or reorders observations.
        """
        rows = np.asarray(rows, dtype=np.int64)
        t = np.arange(1, rows.size + 1, dtype=np.int64) if reindex else self.timestamps[rows]
        return ConfoundedSeries(
            timestamps=t,
            outputs=self.outputs[rows],
            confounder=self.confounder[rows],
            output_names=self.output_names,
            confounder_name=self.confounder_name,
        )

    def to_dict(self) -> dict:
        d = {
            "timestamps": [int(v) for v in self.timestamps],
            "outputs": _float_list(self.outputs),
            "confounder": _float_list(self.confounder),
            "output_names": list(self.output_names),
            "confounder_name": self.confounder_name,
        }
        if self.missing_mask is not None:
            d["missing_mask"] = self.missing_mask.tolist()
        if self.confounder_missing is not None:
            d["confounder_missing"] = self.confounder_missing.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ConfoundedSeries:
        return cls(
            timestamps=np.array(d["timestamps"], dtype=np.int64),
            outputs=_from_float_list(d["outputs"]),
            confounder=_from_float_list(d["confounder"]),
            missing_mask=d.get("missing_mask"),
            confounder_missing=d.get("confounder_missing"),
            output_names=tuple(d["output_names"]),
            confounder_name=d["confounder_name"],
        )


def validate_series(series: ConfoundedSeries, allow_missing: bool = False) -> ConfoundedSeries:
    """Return ``series`` unchanged if it is usable for estimation.

    Length and time-order invariants are already enforced at construction.
    Non-finite cells are accepted only when ``allow_missing`` is set *and*
    the cell is flagged in the corresponding mask.  Rows are reported 1-based.
    """
    for col, values, mask in [
        (series.confounder_name, series.confounder[:, None], series.confounder_missing),
        *[
            (name, series.outputs[:, [k]], None if series.missing_mask is None else series.missing_mask[:, k])
            for k, name in enumerate(series.output_names)
        ],
    ]:
        bad = ~np.isfinite(values[:, 0])
        if allow_missing and mask is not None:
            bad &= ~mask
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NonFiniteValue(i + 1, col, float(values[i, 0]))
    return series


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).ravel()
        if pts.size < 1:
            raise GridError("grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise GridError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise GridError("grid points must be strictly increasing")
        object.__setattr__(self, "points", _frozen(pts))

    @classmethod
    def spanning(cls, z: np.ndarray, size: int = 100, lo: float | None = None, hi: float | None = None) -> EvaluationGrid:
        """``size`` equally spaced points over [min z, max z] (or [lo, hi])."""
        lo = float(np.min(z)) if lo is None else float(lo)
        hi = float(np.max(z)) if hi is None else float(hi)
        if size == 1 or hi == lo:
            return cls(np.array([0.5 * (lo + hi)]))
        return cls(np.linspace(lo, hi, int(size)))

    @property
    def size(self) -> int:
        return self.points.size

    def same_as(self, other: EvaluationGrid) -> bool:
        return self.points.shape == other.points.shape and bool(np.all(self.points == other.points))

    def to_dict(self) -> dict:
        return {"points": _float_list(self.points)}

    @classmethod
    def from_dict(cls, d: dict) -> EvaluationGrid:
        return cls(_from_float_list(d["points"]))


@dataclass(frozen=True, eq=False)
class CovarianceField:
    """Conditional covariance (or correlation) matrices on a grid.

    ``gaps`` is a (G, p) boolean mask marking outputs whose conditional
    variance fell to or below the variance floor; correlation entries that
    involve a gap are NaN rather than a fabricated number.
    """

    grid: EvaluationGrid
    matrices: np.ndarray
    bandwidth: float
    kind: FieldKind = "covariance"
    gaps: np.ndarray | None = None

    def __post_init__(self) -> None:
        m = np.asarray(self.matrices, dtype=np.float64)
        if m.ndim != 3 or m.shape[1] != m.shape[2] or m.shape[0] != self.grid.size:
            raise MismatchedLengths(f"matrices shape {m.shape} does not match grid of {self.grid.size}")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValidationError("bandwidth must be positive and finite")
        if self.kind not in ("covariance", "correlation"):
            raise ValidationError(f"unknown field kind {self.kind!r}")
        object.__setattr__(self, "matrices", _frozen(m))
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        if self.gaps is not None:
            object.__setattr__(self, "gaps", _frozen(self.gaps, bool))

    @property
    def p(self) -> int:
        return self.matrices.shape[1]

    def entry(self, k: int, l: int) -> np.ndarray:
        return self.matrices[:, k, l]

    def check_invariants(self) -> None:
        """Raise ``ValidationError`` if symmetry / PSD / unit-diagonal fail."""
        m = self.matrices
        finite = np.isfinite(m)
        asym = np.abs(np.where(finite, m, 0) - np.where(finite, m, 0).transpose(0, 2, 1))
        if asym.max(initial=0.0) > SYMMETRY_TOL:
            raise ValidationError(f"asymmetry {asym.max():.3g} exceeds {SYMMETRY_TOL}")
        if self.kind == "covariance":
            eig = np.linalg.eigvalsh(m)
            trace = np.trace(m, axis1=1, axis2=2)
            if np.any(eig[:, 0] < -PSD_TOL * np.maximum(trace, 0)):
                raise ValidationError("covariance matrix not positive semidefinite")
        else:
            diag = np.diagonal(m, axis1=1, axis2=2)
            if np.any(np.abs(diag - 1) > 1e-12):
                raise ValidationError("correlation diagonal differs from 1")
            if np.any(np.abs(m[finite]) > 1 + 1e-12):
                raise ValidationError("correlation outside [-1, 1]")

    def to_dict(self) -> dict:
        iu = np.triu_indices(self.p)
        return {
            "kind": self.kind,
            "bandwidth": self.bandwidth,
            "grid": self.grid.to_dict(),
            "p": self.p,
            "upper_triangles": _float_list(self.matrices[:, iu[0], iu[1]]),
            "gaps": None if self.gaps is None else self.gaps.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CovarianceField:
        grid = EvaluationGrid.from_dict(d["grid"])
        p = int(d["p"])
        tri = _from_float_list(d["upper_triangles"]).reshape(grid.size, -1)
        m = np.empty((grid.size, p, p))
        iu = np.triu_indices(p)
        m[:, iu[0], iu[1]] = tri
        m[:, iu[1], iu[0]] = tri
        return cls(grid, m, d["bandwidth"], d["kind"], d.get("gaps"))


@dataclass(frozen=True, eq=False)
class MeanField:
    fitted: np.ndarray
    method: MeanMethod
    bandwidth: float

    def __post_init__(self) -> None:
        f = np.asarray(self.fitted, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        if not np.all(np.isfinite(f)):
            raise ValidationError("fitted mean contains non-finite values")
        object.__setattr__(self, "fitted", _frozen(f))

    def to_dict(self) -> dict:
        return {"fitted": _float_list(self.fitted), "method": self.method, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d: dict) -> MeanField:
        return cls(_from_float_list(d["fitted"]), d["method"], d["bandwidth"])


@dataclass(frozen=True, eq=False)
class BlockPlan:
    """Contiguous row blocks, stored as 0-based half-open ``[start, stop)``."""

    starts: np.ndarray
    stops: np.ndarray
    mode: BlockMode
    span: int
    n: int

    def __post_init__(self) -> None:
        starts = _frozen(self.starts, np.int64)
        stops = _frozen(self.stops, np.int64)
        if starts.shape != stops.shape or starts.size < 1:
            raise ValidationError("a block plan needs at least one block")
        if np.any(stops <= starts) or starts.min() < 0 or stops.max() > self.n:
            raise ValidationError("blocks must be nonempty and within [1, n]")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "stops", stops)

    @property
    def m(self) -> int:
        return self.starts.size

    @property
    def lengths(self) -> np.ndarray:
        return self.stops - self.starts

    def blocks(self) -> list[list[int]]:
        """Blocks as 1-based row lists."""
        return [list(range(a + 1, b + 1)) for a, b in zip(self.starts.tolist(), self.stops.tolist())]

    def to_dict(self) -> dict:
        return {
            "starts": self.starts.tolist(),
            "stops": self.stops.tolist(),
            "mode": self.mode,
            "span": self.span,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BlockPlan:
        return cls(np.array(d["starts"]), np.array(d["stops"]), d["mode"], int(d["span"]), int(d["n"]))


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    """Pointwise band on a grid.

    Arrays have shape (G,) for a single statistic or (G, p, p) for a full
    matrix field.  NaN marks a gap (undefined estimate or too few finite
    replicates) and is carried through to exports as an empty cell.
    """

    grid: EvaluationGrid
    estimate: np.ndarray
    boot_sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    replicates: int
    method: str = "normal"
    kind: str = "covariance"
    n_failed: int = 0

    def __post_init__(self) -> None:
        shape = np.shape(self.estimate)
        for name in ("estimate", "boot_sd", "lower", "upper"):
            arr = _frozen(getattr(self, name))
            if arr.shape != shape or arr.shape[0] != self.grid.size:
                raise MismatchedLengths(f"{name} shape {arr.shape} does not match grid")
            object.__setattr__(self, name, arr)
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.replicates < 1:
            raise ValidationError("replicates must be positive")

    def pair(self, k: int, l: int) -> ConfidenceBand:
        """The 1-d band of matrix entry (k, l)."""
        if self.estimate.ndim != 3:
            raise ValidationError("pair() requires a matrix band")
        return ConfidenceBand(
            self.grid,
            self.estimate[:, k, l],
            self.boot_sd[:, k, l],
            self.lower[:, k, l],
            self.upper[:, k, l],
            self.alpha,
            self.replicates,
            self.method,
            self.kind,
            self.n_failed,
        )

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "estimate": _float_list(self.estimate),
            "boot_sd": _float_list(self.boot_sd),
            "lower": _float_list(self.lower),
            "upper": _float_list(self.upper),
            "alpha": self.alpha,
            "replicates": self.replicates,
            "method": self.method,
            "kind": self.kind,
            "n_failed": self.n_failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ConfidenceBand:
        return cls(
            EvaluationGrid.from_dict(d["grid"]),
            _from_float_list(d["estimate"]),
            _from_float_list(d["boot_sd"]),
            _from_float_list(d["lower"]),
            _from_float_list(d["upper"]),
            float(d["alpha"]),
            int(d["replicates"]),
            d.get("method", "normal"),
            d.get("kind", "covariance"),
            int(d.get("n_failed", 0)),
        )
