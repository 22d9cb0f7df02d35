"""CSV ingestion and emission for the command-line workflows.

Schemas (all files may carry leading ``#`` comment lines):

- panel / factors: header ``time,<id>,...``; rows chronological.
- weights / distances: header ``id,<id>,...``; one labeled row per unit.
- locations: header ``id,lat,lon``.

Numbers are written with 17 significant digits, which round-trips float64
exactly.  Every file written here starts with a comment header echoing the
resolved configuration.
"""

from __future__ import annotations

import csv
import io as _io
import os

import numpy as np

from . import __version__
from .data import FactorSet, PanelData, SpatialWeights
from .exceptions import ValidationError
from .weights import GeoLocations

FLOAT_FMT = "{:.17g}"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT.format(float(x))


def header_lines(config: dict) -> list[str]:
    lines = [f"# sapt {__version__}"]
    for key in sorted(config):
        lines.append(f"# {key}={config[key]}")
    return lines


def _open_rows(path: str):
    try:
        with open(path, "r", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    rows = [row for row in csv.reader(_io.StringIO(text))
            if row and not row[0].lstrip().startswith("#")]
    if not rows:
        raise ValidationError(f"{path} contains no data rows")
    return rows


def _parse_float(cell: str, path: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError as exc:
        raise ValidationError(
            f"{path}: row {row}, column {col}: cannot parse {cell!r} as a number"
        ) from exc


def _read_time_table(path: str):
    rows = _open_rows(path)
    header = rows[0]
    if not header or header[0].strip().lower() != "time":
        raise ValidationError(f"{path}: first header column must be 'time'")
    ids = tuple(cell.strip() for cell in header[1:])
    if not ids:
        raise ValidationError(f"{path}: no data columns after 'time'")
    values = np.empty((len(rows) - 1, len(ids)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(ids) + 1:
            raise ValidationError(
                f"{path}: row {r} has {len(row)} cells, expected {len(ids) + 1}"
            )
        for c, cell in enumerate(row[1:], start=1):
            values[r - 1, c - 1] = _parse_float(cell, path, r, c)
    return ids, values


def read_panel(path: str) -> PanelData:
    ids, values = _read_time_table(path)
    return PanelData(values, ids)


def read_factors(path: str) -> FactorSet:
    ids, values = _read_time_table(path)
    return FactorSet(values, ids)


def read_weights(path: str) -> SpatialWeights:
    ids, matrix = read_distances(path)
    normalized = bool(np.all(np.abs(matrix.sum(axis=1) - 1.0) <= 1e-12))
    return SpatialWeights(matrix, row_normalized=normalized)


def read_distances(path: str):
    """Dense square table with an id header row and a leading id column."""
    rows = _open_rows(path)
    header = rows[0]
    if not header or header[0].strip().lower() != "id":
        raise ValidationError(f"{path}: first header column must be 'id'")
    ids = tuple(cell.strip() for cell in header[1:])
    n = len(ids)
    if len(rows) - 1 != n:
        raise ValidationError(f"{path}: expected {n} data rows, found {len(rows) - 1}")
    matrix = np.empty((n, n))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != n + 1:
            raise ValidationError(f"{path}: row {r} has {len(row)} cells, expected {n + 1}")
        if row[0].strip() != ids[r - 1]:
            raise ValidationError(
                f"{path}: row {r} is labeled {row[0]!r}, expected {ids[r - 1]!r}"
            )
        for c, cell in enumerate(row[1:], start=1):
            matrix[r - 1, c - 1] = _parse_float(cell, path, r, c)
    return ids, matrix


def read_locations(path: str) -> GeoLocations:
    rows = _open_rows(path)
    header = [cell.strip().lower() for cell in rows[0]]
    if header != ["id", "lat", "lon"]:
        raise ValidationError(f"{path}: header must be id,lat,lon, got {rows[0]}")
    ids, lat, lon = [], [], []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != 3:
            raise ValidationError(f"{path}: row {r} has {len(row)} cells, expected 3")
        ids.append(row[0].strip())
        lat.append(_parse_float(row[1], path, r, 1))
        lon.append(_parse_float(row[2], path, r, 2))
    return GeoLocations(ids=tuple(ids), lat=np.array(lat), lon=np.array(lon))


def _write(path: str, config: dict, rows: list[list[str]]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header_lines(config):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)


def write_time_table(path: str, ids, values, config: dict) -> None:
    rows = [["time", *ids]]
    for t, row in enumerate(np.asarray(values, float), start=1):
        rows.append([str(t), *[_fmt(x) for x in row]])
    _write(path, config, rows)


def write_matrix(path: str, ids, matrix, config: dict) -> None:
    rows = [["id", *ids]]
    for label, row in zip(ids, np.asarray(matrix, float)):
        rows.append([label, *[_fmt(x) for x in row]])
    _write(path, config, rows)


def write_table(path: str, columns: list[str], rows: list[list], config: dict) -> None:
    formatted = [[x if isinstance(x, str) else _fmt(x) for x in row] for row in rows]
    _write(path, config, [columns, *formatted])
