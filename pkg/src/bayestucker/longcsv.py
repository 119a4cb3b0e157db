"""Long (coordinate) CSV format for K-way arrays.

Header ``idx1,...,idxK,value``; indices are 1-based integers, ``value`` is a
number or the literal ``NA``. Cells absent from the file are missing.
"""

from __future__ import annotations

import csv
from typing import Sequence

import numpy as np

from .tensor_core import DenseTensor

NA = "NA"


class IngestError(ValueError):
    pass


def ingest_long_csv(path, dims: Sequence[int] | None = None) -> DenseTensor:
    """Read a long CSV into a masked :class:`DenseTensor`.

    Without ``dims`` the extent of each mode is the largest index seen.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        K = len(header) - 1
        expected = [f"idx{k + 1}" for k in range(K)] + ["value"]
        if K < 1 or header != expected:
            raise IngestError(f"{path}:1: header must be {','.join(expected)}, got {','.join(header)}")
        if dims is not None and len(dims) != K:
            raise IngestError(f"{path}: declared {len(dims)} modes but the header has {K}")
        coords: list[tuple[int, ...]] = []
        vals: list[float] = []
        seen: dict[tuple[int, ...], int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != K + 1:
                raise IngestError(f"{path}:{lineno}: expected {K + 1} fields, got {len(row)}")
            try:
                idx = tuple(int(c) for c in row[:K])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: indices must be integers") from None
            raw = row[K].strip()
            if raw == NA:
                value = np.nan
            else:
                try:
                    value = float(raw)
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: value {raw!r} is not numeric or NA") from None
                if not np.isfinite(value):
                    raise IngestError(f"{path}:{lineno}: value {raw!r} is not finite; use NA for missing")
            if any(i < 1 for i in idx):
                raise IngestError(f"{path}:{lineno}: indices are 1-based, got {idx}")
            if dims is not None and any(i > n for i, n in zip(idx, dims)):
                raise IngestError(f"{path}:{lineno}: index {idx} outside declared dims {tuple(dims)}")
            if idx in seen:
                raise IngestError(f"{path}: duplicate cell {idx} on lines {seen[idx]} and {lineno}")
            seen[idx] = lineno
            coords.append(idx)
            vals.append(value)
    if dims is None:
        if not coords:
            raise IngestError(f"{path}: no data rows and no declared dims")
        dims = tuple(int(m) for m in np.max(np.array(coords), axis=0))
    dims = tuple(int(n) for n in dims)
    values = np.full(dims, np.nan)
    if coords:
        idx = tuple((np.array(coords) - 1).T)
        values[idx] = vals
    return DenseTensor(values, np.isfinite(values))


def format_value(v: float) -> str:
    # repr gives the shortest string that round-trips exactly
    return NA if not np.isfinite(v) else repr(float(v))


def export_long_csv(path, T, mask=None) -> None:
    """Write every cell in vectorization order (mode 1 fastest); masked cells as ``NA``."""
    if isinstance(T, DenseTensor):
        values = T.values
        mask = T.observed if mask is None else mask
    else:
        values = np.asarray(T, dtype=float)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    dims = values.shape
    K = len(dims)
    idx = np.indices(dims).reshape(K, -1, order="F").T + 1
    flat = values.ravel(order="F")
    flat_mask = np.asarray(mask, bool).ravel(order="F")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"idx{k + 1}" for k in range(K)] + ["value"])
        for coord, v, m in zip(idx, flat, flat_mask):
            w.writerow([*coord.tolist(), format_value(v) if m else NA])


def write_matrix_csv(path, A: np.ndarray, row_label: str = "row", col_prefix: str = "col") -> None:
    A = np.asarray(A, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([row_label] + [f"{col_prefix}{j + 1}" for j in range(A.shape[1])])
        for i, row in enumerate(A):
            w.writerow([i + 1] + [format_value(v) for v in row])
