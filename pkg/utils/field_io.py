# utils/field_io.py
"""
Little-endian binary dumps:

  PHKS  3D scalar field   magic, u32 version, u32 n, f64 extent, n^3 f64 (z fastest)
  PHKR  radial snapshot   magic, u32 m, f64 dr, f64 t, m f64 rho, m f64 conc
  PHKP  particle cloud    magic, u32 P, f64 t, 3P f64 coordinates
"""
import os
import struct

import numpy as np

from models.core import FieldFormatError, Grid3, ScalarField3

FIELD_MAGIC = b"PHKS"
RADIAL_MAGIC = b"PHKR"
PARTICLE_MAGIC = b"PHKP"
FIELD_VERSION = 1

_FIELD_HEADER = struct.Struct("<4sIId")
_RADIAL_HEADER = struct.Struct("<4sIdd")
_PARTICLE_HEADER = struct.Struct("<4sId")


def _write_bytes(path, chunks):
    """Write all chunks or leave no file behind."""
    try:
        with open(path, "wb") as f:
            for chunk in chunks:
                f.write(chunk)
    except Exception:
        if os.path.exists(path):
            os.remove(path)
        raise


def _read_header(path, header: struct.Struct, magic: bytes):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < header.size:
        raise FieldFormatError(f"{path}: file too short for a {magic.decode()} header")
    fields = header.unpack_from(data, 0)
    if fields[0] != magic:
        raise FieldFormatError(f"{path}: bad magic {fields[0]!r}, expected {magic!r}")
    return fields, data[header.size:]


def _payload(path, payload: bytes, count: int) -> np.ndarray:
    expected = count * 8
    if len(payload) != expected:
        raise FieldFormatError(
            f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def write_field(field: ScalarField3, path):
    header = _FIELD_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, field.grid.n, field.grid.extent)
    _write_bytes(path, [header, np.ascontiguousarray(field.values, dtype="<f8").tobytes()])


def read_field(path) -> ScalarField3:
    (_, version, n, extent), payload = _read_header(path, _FIELD_HEADER, FIELD_MAGIC)
    if version != FIELD_VERSION:
        raise FieldFormatError(f"{path}: unsupported version {version}")
    values = _payload(path, payload, n ** 3)
    return ScalarField3(Grid3(extent, n), values.reshape(n, n, n))


def write_radial(rho: np.ndarray, conc: np.ndarray, dr: float, time: float, path):
    if len(rho) != len(conc):
        raise ValueError("rho and conc profiles differ in length")
    header = _RADIAL_HEADER.pack(RADIAL_MAGIC, len(rho), dr, time)
    _write_bytes(path, [header, np.asarray(rho, dtype="<f8").tobytes(),
                        np.asarray(conc, dtype="<f8").tobytes()])


def read_radial(path):
    """Returns (rho, conc, dr, time)."""
    (_, m, dr, time), payload = _read_header(path, _RADIAL_HEADER, RADIAL_MAGIC)
    values = _payload(path, payload, 2 * m)
    return values[:m].copy(), values[m:].copy(), dr, time


def write_particles(positions: np.ndarray, time: float, path):
    pos = np.asarray(positions, dtype="<f8").reshape(-1, 3)
    _write_bytes(path, [_PARTICLE_HEADER.pack(PARTICLE_MAGIC, len(pos), time), pos.tobytes()])


def read_particles(path):
    """Returns (positions (P, 3), time)."""
    (_, count, time), payload = _read_header(path, _PARTICLE_HEADER, PARTICLE_MAGIC)
    return _payload(path, payload, 3 * count).reshape(count, 3), time
