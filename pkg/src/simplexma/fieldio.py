"""Binary persistence of solved fields.

Layout (little-endian)::

    b"MAFG"  u8 version  u8 d  f64 level  f64 h  u64 count
    count * d * f64   node coordinates, row-major lattice order
    count * f64       node values
    u32               CRC32 of every preceding byte

All nodes are stored, including the boundary layer; the interior flag is
recomputed from ``w < level`` on load.
"""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .solver import GradHessField, ScalarField, grid_from_nodes

MAGIC = b"MAFG"
VERSION = 1
_HEADER = struct.Struct("<4sBBddQ")


class FieldFormatError(ValueError):
    pass


def dumps(field: GradHessField | ScalarField) -> bytes:
    sf = field.base if isinstance(field, GradHessField) else field
    grid = sf.grid
    head = _HEADER.pack(MAGIC, VERSION, grid.d, grid.level, grid.h, grid.n_nodes)
    coords = np.ascontiguousarray(grid.coords, dtype="<f8").tobytes()
    vals = np.ascontiguousarray(sf.values, dtype="<f8").tobytes()
    body = head + coords + vals
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> GradHessField:
    if len(data) < _HEADER.size + 4:
        raise FieldFormatError("truncated field file")
    magic, version, d, level, h, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError("not a field file (bad magic)")
    if version != VERSION:
        raise FieldFormatError(f"unsupported field file version {version}")
    expected = _HEADER.size + 8 * count * (d + 1) + 4
    if len(data) != expected:
        raise FieldFormatError(f"size mismatch: expected {expected} bytes, got {len(data)}")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[: expected - 4]) != crc:
        raise FieldFormatError("CRC mismatch")
    off = _HEADER.size
    coords = np.frombuffer(data, dtype="<f8", count=count * d, offset=off).reshape(count, d)
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=off + 8 * count * d)
    grid = grid_from_nodes(d, level, h, coords.astype(float))
    return GradHessField(ScalarField(grid, vals.astype(float)))


def save_field(field, path) -> None:
    """Write atomically: a partial file never appears under ``path``."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(field))
    os.replace(tmp, path)


def load_field(path) -> GradHessField:
    with open(path, "rb") as fh:
        return loads(fh.read())
