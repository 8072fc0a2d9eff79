"""Exception hierarchy.

Every error carries enough location information (1-based rows, grid values,
flag names) for the CLI to print an actionable message.
"""

from __future__ import annotations


class CondCovError(Exception):
    """Base class for all package errors."""


class ValidationError(CondCovError, ValueError):
    """Input data or configuration violates a documented precondition."""


class EstimationError(CondCovError, RuntimeError):
    """Numerical estimation could not produce a well-defined result."""


# -- data model ---------------------------------------------------------------


class MismatchedLengths(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    def __init__(self, row: int, column: str | int, value: float):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-finite value {value!r} at row {row}, column {column}")


class NonMonotoneTime(ValidationError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"timestamps not strictly increasing at row {row}")


class GridError(ValidationError):
    pass


# -- estimation ---------------------------------------------------------------


class DegenerateWeights(EstimationError):
    def __init__(self, z: float, weight_sum: float, floor: float):
        self.z = z
        self.weight_sum = weight_sum
        self.floor = floor
        super().__init__(
            f"kernel weight sum {weight_sum:.3g} below floor {floor:.3g} at z={z:.6g}; "
            "increase the bandwidth or shrink the grid"
        )


class SingularLocalFit(EstimationError):
    def __init__(self, z: float):
        self.z = z
        super().__init__(f"local-linear design is rank-deficient at z={z:.6g}")


class VarianceFloorHit(EstimationError):
    def __init__(self, z: float, k: int):
        self.z = z
        self.k = k  # 1-based output index
        super().__init__(f"variance of output {k} at or below floor at z={z:.6g}")


class AllCandidatesDegenerate(EstimationError):
    pass


# -- bootstrap ----------------------------------------------------------------


class SpanTooLarge(ValidationError):
    pass


class EmptyCalendarBlocks(ValidationError):
    pass


class TooManyFailures(EstimationError):
    def __init__(self, failed: int, total: int):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed} of {total} bootstrap replicates were degenerate")


class InsufficientReplicates(EstimationError):
    def __init__(self, z: float, available: int):
        self.z = z
        self.available = available
        super().__init__(f"only {available} finite replicate value(s) at z={z:.6g}")


class GridMismatch(ValidationError):
    pass


# -- simulation ---------------------------------------------------------------


class UnknownScenario(ValidationError):
    pass


class NonPSDAtTemperature(EstimationError):
    def __init__(self, z: float):
        self.z = z
        super().__init__(f"scenario covariance is not positive semidefinite at z={z:.6g}")


# -- ingestion / io -----------------------------------------------------------


class MissingColumn(ValidationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"column {name!r} not found in header")


class UnparseableCell(ValidationError):
    def __init__(self, row: int, column: str, text: str):
        self.row = row
        self.column = column
        self.text = text
        super().__init__(f"cannot parse {text!r} at row {row}, column {column!r}")


class DuplicateTimestamp(ValidationError):
    def __init__(self, t: int):
        self.t = t
        super().__init__(f"duplicate timestamp {t}")


class ColumnAllMissing(ValidationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"column {name!r} has fewer than 2 observed values")


class IoFailure(CondCovError, OSError):
    pass
