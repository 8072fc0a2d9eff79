"""Result tables: long-format CSV and a self-describing JSON document.

Floats are written with ``repr``, the shortest decimal string that parses
back to the identical double (never more than 17 significant digits), so
both formats round-trip exactly.  Gaps (NaN) become empty cells in CSV and
``null`` in JSON.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import ConfidenceBand, CovarianceField, EvaluationGrid
from .errors import IoFailure, ValidationError

FORMATS = ("delimited", "structured")
DELIMITED_COLUMNS = ("z", "k", "l", "estimate", "sd", "lower", "upper")
DOCUMENT_TAG = "condcov-export/1"


def _num(v: float) -> str:
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def _parse_num(text: str) -> float:
    return float(text) if text.strip() else math.nan


def _as_matrix(a: np.ndarray) -> np.ndarray:
    return a[:, None, None] if a.ndim == 1 else a


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def delimited_text(obj: CovarianceField | ConfidenceBand) -> str:
    """Long table, one row per (z, k, l) with k <= l (1-based)."""
    est = _as_matrix(obj.matrices if isinstance(obj, CovarianceField) else obj.estimate)
    if isinstance(obj, ConfidenceBand):
        sd, lo, hi = (_as_matrix(a) for a in (obj.boot_sd, obj.lower, obj.upper))
    else:
        sd = lo = hi = np.full(est.shape, np.nan)
    p = est.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DELIMITED_COLUMNS)
    for g, zg in enumerate(obj.grid.points):
        for k in range(p):
            for l in range(k, p):
                w.writerow(
                    [_num(zg), k + 1, l + 1]
                    + [_num(a[g, k, l]) for a in (est, sd, lo, hi)]
                )
    return buf.getvalue()


def _triangles(a: np.ndarray) -> list:
    """(G, p, p) -> per-grid upper triangles, row-major, NaN as None."""
    a = _as_matrix(a)
    iu = np.triu_indices(a.shape[1])
    return [[None if not math.isfinite(v) else float(v) for v in row] for row in a[:, iu[0], iu[1]]]


def _untriangle(rows: list, p: int) -> np.ndarray:
    tri = np.array([[math.nan if v is None else v for v in row] for row in rows], dtype=np.float64)
    out = np.empty((tri.shape[0], p, p))
    iu = np.triu_indices(p)
    out[:, iu[0], iu[1]] = tri
    out[:, iu[1], iu[0]] = tri
    return out


def structured_document(obj: CovarianceField | ConfidenceBand, metadata: dict | None = None) -> dict:
    meta = {"software_version": __version__}
    if isinstance(obj, CovarianceField):
        meta["h"] = obj.bandwidth
    else:
        meta["alpha"] = obj.alpha
        meta["kappa"] = obj.replicates
    meta.update(metadata or {})
    doc: dict = {"format": DOCUMENT_TAG, "metadata": meta, "grid": [float(v) for v in obj.grid.points]}
    if isinstance(obj, CovarianceField):
        doc.update(
            type="field",
            kind=obj.kind,
            p=obj.p,
            bandwidth=obj.bandwidth,
            matrices=_triangles(obj.matrices),
            gaps=None if obj.gaps is None else obj.gaps.tolist(),
        )
    else:
        doc.update(
            type="band",
            kind=obj.kind,
            p=None if obj.estimate.ndim == 1 else obj.estimate.shape[1],
            alpha=obj.alpha,
            replicates=obj.replicates,
            method=obj.method,
            n_failed=obj.n_failed,
        )
        for name in ("estimate", "boot_sd", "lower", "upper"):
            doc[name] = _triangles(getattr(obj, name))
    return doc


def export_field(obj: CovarianceField | ConfidenceBand, path, format: str = "delimited", metadata: dict | None = None) -> Path:
    """Write a field or band to ``path``.

    Parameters
    ----------
    obj : CovarianceField or ConfidenceBand
    path : str or Path
    format : {"delimited", "structured"}
    metadata : dict, optional
        Extra keys for the structured document (seed, mode, span, ...).
        Ignored by the delimited format.
    """
    if format not in FORMATS:
        raise ValidationError(f"unknown export format {format!r}; expected one of {FORMATS}")
    if not isinstance(obj, (CovarianceField, ConfidenceBand)):
        raise ValidationError(f"cannot export {type(obj).__name__}")
    path = Path(path)
    if format == "delimited":
        text = delimited_text(obj)
    else:
        text = json.dumps(structured_document(obj, metadata), indent=1, allow_nan=False) + "\n"
    _write_text(path, text)
    return path


@dataclass(frozen=True, eq=False)
class DelimitedTable:
    """Contents of a delimited export as (G, p, p) arrays with NaN gaps."""

    grid: EvaluationGrid
    estimate: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def read_delimited(path) -> DelimitedTable:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != DELIMITED_COLUMNS:
        raise IoFailure(f"{path}: header must be {','.join(DELIMITED_COLUMNS)}")
    body = rows[1:]
    try:
        z = [float(r[0]) for r in body]
        k = np.array([int(r[1]) for r in body]) - 1
        l = np.array([int(r[2]) for r in body]) - 1
        vals = np.array([[_parse_num(c) for c in r[3:7]] for r in body], dtype=np.float64).reshape(-1, 4)
    except (ValueError, IndexError) as exc:
        raise IoFailure(f"{path}: malformed row: {exc}") from exc
    p = int(l.max()) + 1 if body else 0
    points = np.array(list(dict.fromkeys(z)))
    gi = np.searchsorted(points, z)
    arrays = []
    for c in range(4):
        a = np.full((points.size, p, p), np.nan)
        a[gi, k, l] = vals[:, c]
        a[gi, l, k] = vals[:, c]
        arrays.append(a)
    return DelimitedTable(EvaluationGrid(points), *arrays)


def read_structured(path) -> tuple[CovarianceField | ConfidenceBand, dict]:
    """Inverse of the structured export: (object, metadata)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if doc.get("format") != DOCUMENT_TAG:
        raise IoFailure(f"{path}: not a {DOCUMENT_TAG} document")
    grid = EvaluationGrid(np.array(doc["grid"], dtype=np.float64))
    if doc["type"] == "field":
        gaps = None if doc["gaps"] is None else np.array(doc["gaps"], dtype=bool)
        obj = CovarianceField(grid, _untriangle(doc["matrices"], doc["p"]), doc["bandwidth"], doc["kind"], gaps)
    else:
        p = doc["p"]
        arrs = [_untriangle(doc[n], p or 1) for n in ("estimate", "boot_sd", "lower", "upper")]
        if p is None:
            arrs = [a[:, 0, 0] for a in arrs]
        obj = ConfidenceBand(grid, *arrs, doc["alpha"], doc["replicates"], doc["method"], doc["kind"], doc["n_failed"])
    return obj, doc["metadata"]
