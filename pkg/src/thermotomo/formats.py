"""Bit-exact binary file formats: TAWG grids, TAWS traces, 16-bit PGM images.

All integers and floats are little-endian and fixed-width; round trips are
bitwise identical.  Writers are whole-file atomic (write to a temp file in
the target directory, then rename).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import DegenerateInputError, FormatError
from .grid_field import Grid, ScalarField
from .wave_solver import BoundaryTrace

GRID_MAGIC = b"TAWG"
TRACE_MAGIC = b"TAWS"
FORMAT_VERSION = 1

_GRID_HEADER = struct.Struct("<4sIQQddd")    # magic, version, nx, ny, ox, oy, h
_TRACE_HEADER = struct.Struct("<4sIQQd")     # magic, version, n_times, n_det, dt


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_grid(path, field: ScalarField):
    """Serialize a field: 48-byte header, then nx*ny float64 row-major."""
    g = field.grid
    header = _GRID_HEADER.pack(GRID_MAGIC, FORMAT_VERSION, g.nx, g.ny,
                               g.origin[0], g.origin[1], g.h)
    _atomic_write(path, header + field.data.astype("<f8").tobytes(order="C"))


def read_grid(path) -> ScalarField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _GRID_HEADER.size:
        raise FormatError(f"file too short for a TAWG header ({len(raw)} bytes)",
                          offset=len(raw))
    magic, version, nx, ny, ox, oy, h = _GRID_HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GRID_MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported TAWG version {version}", offset=4)
    expected = _GRID_HEADER.size + nx * ny * 8
    if len(raw) != expected:
        raise FormatError(
            f"TAWG payload length mismatch: expected {expected} bytes, got {len(raw)}",
            offset=min(len(raw), expected))
    data = np.frombuffer(raw, dtype="<f8", offset=_GRID_HEADER.size).reshape(nx, ny)
    return ScalarField(Grid(int(nx), int(ny), h, (ox, oy)), data.copy())


def write_trace(path, trace: BoundaryTrace):
    """Serialize a trace: header, detector coordinates, then values time-major."""
    n_times, n_det = trace.values.shape
    header = _TRACE_HEADER.pack(TRACE_MAGIC, FORMAT_VERSION, n_times, n_det, trace.dt)
    coords = trace.points.astype("<f8").tobytes(order="C")
    payload = trace.values.astype("<f8").tobytes(order="C")
    _atomic_write(path, header + coords + payload)


def read_trace(path) -> BoundaryTrace:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _TRACE_HEADER.size:
        raise FormatError(f"file too short for a TAWS header ({len(raw)} bytes)",
                          offset=len(raw))
    magic, version, n_times, n_det, dt = _TRACE_HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TRACE_MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported TAWS version {version}", offset=4)
    coords_bytes = n_det * 16
    expected = _TRACE_HEADER.size + coords_bytes + n_times * n_det * 8
    if len(raw) != expected:
        raise FormatError(
            f"TAWS payload length mismatch: expected {expected} bytes, got {len(raw)}",
            offset=min(len(raw), expected))
    points = np.frombuffer(raw, dtype="<f8", offset=_TRACE_HEADER.size,
                           count=n_det * 2).reshape(n_det, 2)
    values = np.frombuffer(raw, dtype="<f8",
                           offset=_TRACE_HEADER.size + coords_bytes).reshape(n_times, n_det)
    return BoundaryTrace(points=points.copy(), dt=dt, values=values.copy())


def emit_pgm(field: ScalarField, path, value_range: tuple[float, float] | None = None):
    """Write a binary 16-bit PGM (P5, maxval 65535, big-endian samples).

    Values map linearly from [lo, hi] (default: field min/max) onto
    [0, 65535], rounded to nearest and clipped.  Pixel order matches the
    field's row-major data order: width ny, height nx.
    """
    lo, hi = value_range if value_range is not None else (float(field.data.min()),
                                                          float(field.data.max()))
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo == hi:
        raise DegenerateInputError(f"degenerate value range ({lo}, {hi})")
    scaled = np.round((field.data - lo) / (hi - lo) * 65535.0)
    pixels = np.clip(scaled, 0, 65535).astype(">u2")
    header = f"P5\n{field.grid.ny} {field.grid.nx}\n65535\n".encode("ascii")
    _atomic_write(path, header + pixels.tobytes(order="C"))
