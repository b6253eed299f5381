"""Plain-text persistence helpers.

Everything the package writes is either CSV or `key = value` text so that
outputs stay diffable.  Floats are rendered with :func:`repr`, which emits the
shortest decimal string that round-trips exactly (17 significant digits when
needed), so saving and reloading a model reproduces it bit for bit.
"""

from __future__ import annotations

import io
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


def fmt_float(x: float) -> str:
    """Shortest exactly-round-tripping decimal representation of ``x``."""
    return repr(float(x))


def fmt_row(values: Iterable[float]) -> str:
    return ",".join(fmt_float(v) for v in values)


def write_kv(fh: io.TextIOBase, items: dict[str, object]) -> None:
    """Write ``key = value`` lines; floats exact, arrays comma-joined."""
    for key, value in items.items():
        if isinstance(value, (np.ndarray, list, tuple)):
            text = ",".join(_scalar_text(v) for v in value)
        else:
            text = _scalar_text(value)
        fh.write(f"{key} = {text}\n")


def _scalar_text(value: object) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return fmt_float(float(value))
    return str(value)


def read_kv(fh: io.TextIOBase) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def parse_float_list(text: str) -> np.ndarray:
    if not text:
        return np.empty(0)
    return np.array([float(tok) for tok in text.split(",")])


def write_csv(fh: io.TextIOBase, header: Sequence[str], rows: np.ndarray) -> None:
    """Write a numeric table with exact float formatting."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size and rows.shape[1] != len(header):
        raise DataError(f"row width {rows.shape[1]} != header width {len(header)}")
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(fmt_row(row) + "\n")


def read_csv(fh: io.TextIOBase) -> tuple[list[str], np.ndarray]:
    """Read a numeric table written by :func:`write_csv`."""
    header_line = fh.readline().strip()
    if not header_line:
        raise DataError("empty CSV: missing header line")
    header = header_line.split(",")
    data: list[list[float]] = []
    for lineno, line in enumerate(fh, start=2):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} cells, got {len(cells)}")
        try:
            data.append([float(c) for c in cells])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
    table = np.array(data) if data else np.empty((0, len(header)))
    return header, table
