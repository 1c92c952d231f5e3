"""CSV ingestion and the bundled reference tables.

Dialect: comma separated, header row required, UTF-8, ``.`` as decimal
point, no thousands separators. Rows with a missing value in any selected
column are dropped and counted, never imputed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InputError, MissingColumn, NonNumericCell, SchemaMismatch
from .projection import Dataset

MISSING_TOKENS = frozenset({"", "na", "nan", "n/a", "null", "none", "."})
REFERENCE_FILE = "reference_tables.csv"


@dataclass(frozen=True)
class LoadedData:
    dataset: Dataset
    y_name: str
    x_names: tuple[str, ...]
    control_names: tuple[str, ...]
    rows_read: int
    rows_dropped: int
    dropped_rows: tuple[int, ...]


def _split_names(spec) -> list[str]:
    if spec is None:
        return []
    if isinstance(spec, str):
        return [s.strip() for s in spec.split(",") if s.strip()]
    return list(spec)


def read_columns(path, columns: list[str]):
    """Parse the named columns; returns ``(matrix, header, kept, dropped_rows)``.

    ``dropped_rows`` holds 1-based data row numbers (header excluded).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file, a header row is required") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise MissingColumn(f"{path}: column(s) not found: {', '.join(missing)}")
        idx = [header.index(c) for c in columns]
        rows, dropped = [], []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: data row {lineno} has {len(row)} fields, header has {len(header)}")
            cells = [row[i].strip() for i in idx]
            if any(c.lower() in MISSING_TOKENS for c in cells):
                dropped.append(lineno)
                continue
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                col = columns[cells.index(bad)]
                raise NonNumericCell(f"{path}: data row {lineno}, column {col!r}: {bad!r} is not a number") from None
            if not all(np.isfinite(vals)):
                raise NonNumericCell(f"{path}: data row {lineno} has a non-finite value")
            rows.append(vals)
    mat = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
    return mat, header, len(rows), tuple(dropped)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_dataset(path, y: str, x, controls="all-others") -> LoadedData:
    """Read ``y``, the regressor column(s) ``x`` and the controls from a CSV file.

    ``controls`` is a list of names, a comma-separated string, ``None`` or
    ``""`` for no controls, or ``"all-others"`` for every remaining column.
    """
    x_names = _split_names(x)
    if not x_names:
        raise InputError("at least one regressor column is required")
    if controls == "all-others":
        with open(path, newline="", encoding="utf-8") as fh:
            header = [h.strip() for h in next(csv.reader(fh), [])]
        control_names = [h for h in header if h != y and h not in x_names]
    else:
        control_names = _split_names(controls)
    names = [y] + x_names + control_names
    dup = sorted({c for c in names if names.count(c) > 1})
    if dup:
        raise InputError(f"column(s) used more than once: {', '.join(dup)}")
    mat, _, kept, dropped = read_columns(path, names)
    if kept == 0:
        raise InputError(f"{path}: no complete rows")
    d = len(x_names)
    data = Dataset(mat[:, 0], mat[:, 1:1 + d], mat[:, 1 + d:])
    return LoadedData(data, y, tuple(x_names), tuple(control_names), kept + len(dropped),
                      len(dropped), dropped)


def write_dataset(path, dataset: Dataset, y: str = "y", x_names=None, control_names=None) -> None:
    """Write a dataset with exact (round-trip) float formatting."""
    x_names = list(x_names or ([f"x{j + 1}" for j in range(dataset.d_x)] if dataset.d_x > 1 else ["x"]))
    control_names = list(control_names or [f"w{j + 1}" for j in range(dataset.q)])
    mat = np.column_stack([dataset.y, dataset.x, dataset.W])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([y] + x_names + control_names)
        for row in mat:
            w.writerow([repr(float(v)) for v in row])


def read_report_csv(text: str, fields) -> list[dict]:
    """Rows of a simulation CSV; the header must equal ``fields``."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != tuple(fields):
        raise SchemaMismatch(f"expected columns {','.join(fields)}, got {','.join(reader.fieldnames or [])}")
    return list(reader)


def reference_tables() -> dict[tuple[str, str, str], float]:
    """Published rejection frequencies keyed by ``(design, ratio_or_G, method)``."""
    text = resources.files("manyboot.data").joinpath(REFERENCE_FILE).read_text(encoding="utf-8")
    return {(r["design"], r["ratio_or_G"], r["method"]): float(r["value"])
            for r in csv.DictReader(io.StringIO(text))}
