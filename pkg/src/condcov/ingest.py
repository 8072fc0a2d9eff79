"""CSV ingestion and gap filling for sensor feature tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import ConfoundedSeries, validate_series
from .errors import ColumnAllMissing, DuplicateTimestamp, IoFailure, MissingColumn, UnparseableCell, ValidationError

TIME_FORMATS = ("iso", "epoch")


@dataclass(frozen=True)
class ColumnMap:
    time_column: str
    confounder_column: str
    output_columns: tuple[str, ...]

    def __post_init__(self) -> None:
        outs = tuple(self.output_columns)
        object.__setattr__(self, "output_columns", outs)
        if not outs:
            raise ValidationError("at least one output column is required")
        names = [self.time_column, self.confounder_column, *outs]
        if len(set(names)) != len(names):
            raise ValidationError(f"column names must be distinct: {names}")


def parse_time(text: str, fmt: str) -> int:
    """Seconds since the Unix epoch.  Naive ISO times are taken as UTC."""
    text = text.strip()
    if fmt == "epoch":
        value = float(text)
        if not math.isfinite(value) or value != math.floor(value):
            raise ValueError(text)
        return int(value)
    if fmt != "iso":
        raise ValidationError(f"unknown time format {fmt!r}; expected one of {TIME_FORMATS}")
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_value(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


def load_dataset(path, columns: ColumnMap, time_format: str = "iso") -> ConfoundedSeries:
    """Read a header-row CSV into a series with missing cells flagged.

    Rows are sorted by time.  Empty, non-numeric and non-finite output or
    confounder cells are stored as NaN and flagged in the masks; an
    unparseable timestamp is an error (rows are reported 1-based counting the
    header as row 1).
    """
    if time_format not in TIME_FORMATS:
        raise ValidationError(f"unknown time format {time_format!r}; expected one of {TIME_FORMATS}")
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ValidationError(f"{path} is empty")
            header = [h.strip() for h in header]
            index = {}
            for name in (columns.time_column, columns.confounder_column, *columns.output_columns):
                if name not in header:
                    raise MissingColumn(name)
                index[name] = header.index(name)
            times, conf, outs = [], [], []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                cells = row + [""] * (len(header) - len(row))
                raw_t = cells[index[columns.time_column]]
                try:
                    times.append(parse_time(raw_t, time_format))
                except (ValueError, OverflowError) as exc:
                    raise UnparseableCell(lineno, columns.time_column, raw_t) from exc
                conf.append(_parse_value(cells[index[columns.confounder_column]]))
                outs.append([_parse_value(cells[index[c]]) for c in columns.output_columns])
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not times:
        raise ValidationError(f"{path} has no data rows")
    t = np.array(times, dtype=np.int64)
    order = np.argsort(t, kind="stable")
    t = t[order]
    dup = np.flatnonzero(np.diff(t) == 0)
    if dup.size:
        raise DuplicateTimestamp(int(t[dup[0]]))
    z = np.array(conf)[order]
    X = np.array(outs, dtype=np.float64).reshape(len(times), -1)[order]
    return ConfoundedSeries(
        t,
        X,
        z,
        missing_mask=np.isnan(X),
        confounder_missing=np.isnan(z),
        output_names=columns.output_columns,
        confounder_name=columns.confounder_column,
    )


def _fill_column(t: np.ndarray, values: np.ndarray, missing: np.ndarray, name: str) -> np.ndarray:
    observed = ~missing
    if observed.sum() < 2:
        raise ColumnAllMissing(name)
    if not missing.any():
        return values.copy()
    out = values.copy()
    # np.interp holds the end values constant outside the observed range
    out[missing] = np.interp(t[missing], t[observed], values[observed])
    return out


def fill_missing_linear(series: ConfoundedSeries) -> ConfoundedSeries:
    """Fill flagged gaps by linear interpolation in time, per column.

    Leading and trailing gaps take the nearest observed value.  The result
    carries no masks and passes :func:`validate_series`.
    """
    validate_series(series, allow_missing=True)
    t = series.timestamps.astype(np.float64)
    n, p = series.n, series.p
    mask = series.missing_mask if series.missing_mask is not None else np.zeros((n, p), dtype=bool)
    cmask = series.confounder_missing if series.confounder_missing is not None else np.zeros(n, dtype=bool)
    z = _fill_column(t, series.confounder, cmask, series.confounder_name)
    X = np.column_stack(
        [_fill_column(t, series.outputs[:, k], mask[:, k], series.output_names[k]) for k in range(p)]
    )
    filled = ConfoundedSeries(
        series.timestamps, X, z, output_names=series.output_names, confounder_name=series.confounder_name
    )
    return validate_series(filled)


def write_series_csv(series: ConfoundedSeries, path, time_format: str = "epoch") -> None:
    """Write a dense series in the layout :func:`load_dataset` reads."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", series.confounder_name, *series.output_names])
            for i in range(series.n):
                t = int(series.timestamps[i])
                stamp = (
                    str(t)
                    if time_format == "epoch"
                    else datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
                )
                w.writerow([stamp, _cell(series.confounder[i]), *(_cell(v) for v in series.outputs[i])])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _cell(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ""
