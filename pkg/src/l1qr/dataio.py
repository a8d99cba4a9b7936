"""CSV ingestion and atomic artifact writing."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .core import DataError, Dataset, build_dataset


def parse_csv_dataset(path, response_column: Union[str, int], add_intercept: bool = True,
                      delimiter: str = ",") -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    ``response_column`` is a header name or a 0-based column index.  All
    other columns become regressors, preceded by an intercept column named
    ``"intercept"`` when ``add_intercept`` is set.  Any non-numeric cell is
    fatal; the error lists every offending row (1-based, header is row 1).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if len(body) < 2:
        raise DataError(f"{path}: need at least 2 data rows, found {len(body)}")

    if isinstance(response_column, str) and not response_column.lstrip("-").isdigit():
        if response_column not in header:
            raise DataError(f"response column {response_column!r} not in header {header}")
        ycol = header.index(response_column)
    else:
        ycol = int(response_column)
        if not 0 <= ycol < len(header):
            raise DataError(f"response column index {ycol} out of range "
                            f"(file has {len(header)} columns)")

    values = np.empty((len(body), len(header)))
    bad = []
    for r, row in enumerate(body):
        if len(row) != len(header):
            bad.append((r + 2, f"expected {len(header)} fields, got {len(row)}"))
            continue
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                bad.append((r + 2, f"column {header[c]!r} value {cell!r}"))
                break
            if not np.isfinite(v):
                bad.append((r + 2, f"column {header[c]!r} value {cell!r}"))
                break
            values[r, c] = v
    if bad:
        listing = "; ".join(f"row {i}: {msg}" for i, msg in bad[:20])
        more = f"; and {len(bad) - 20} more rows" if len(bad) > 20 else ""
        raise DataError(f"{path}: invalid data in {len(bad)} rows ({listing}{more})")

    y = values[:, ycol]
    xcols = [c for c in range(len(header)) if c != ycol]
    X = values[:, xcols]
    names = [header[c] for c in xcols]
    intercept = None
    if add_intercept:
        X = np.column_stack([np.ones(len(body)), X])
        names = ["intercept"] + names
        intercept = 0
    return build_dataset(X, y, intercept_col=intercept, names=names)


def write_atomic(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path``, then rename it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    """JSON text with insertion-ordered keys and a trailing newline."""
    return json.dumps(_plain(obj), indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    write_atomic(path, dumps_json(obj))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    write_atomic(path, csv_text(header, rows))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def sparse_coefficients(beta, names=None, tol: float = 0.0) -> dict:
    """``{name: value}`` for the nonzero entries of ``beta``."""
    beta = np.asarray(beta, dtype=float)
    out = {}
    for j in np.flatnonzero(np.abs(beta) > tol):
        key = names[j] if names is not None else str(int(j))
        out[key] = float(beta[j])
    return out
