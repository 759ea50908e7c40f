"""Bit-exact binary file formats for density maps and masks.

Density file layout (all integers little-endian):

    bytes 0-3   magic "DMAP"
    bytes 4-5   version, uint16, currently 1
    bytes 6-9   height, uint32
    bytes 10-13 width, uint32
    bytes 14-   height*width IEEE-754 float32 values, row-major

Mask files are identical except the magic is "MASK" and the payload is one
byte per pixel, each 0 or 1.

Values are stored as float32 (external model predictions rarely carry more
precision); in-memory arithmetic stays float64. Reading a file and writing
it back reproduces the bytes exactly. Trailing bytes after the payload are
rejected, so a file is valid iff it is exactly header + payload.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import FileFormatError, NegativeDensityWarning
from .grids import BinaryMask, DensityMap

DENSITY_MAGIC = b"DMAP"
MASK_MAGIC = b"MASK"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHII")


def _read_header(data: bytes, magic: bytes, path) -> tuple[int, int]:
    if len(data) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header", offset=len(data))
    got_magic, version, height, width = _HEADER.unpack_from(data, 0)
    if got_magic != magic:
        raise FileFormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}", offset=4)
    return height, width


def _check_payload(data: bytes, expected: int, path) -> None:
    actual = len(data) - _HEADER.size
    if actual < expected:
        raise FileFormatError(
            f"{path}: truncated payload, expected {expected} bytes, found {actual}",
            offset=len(data),
        )
    if actual > expected:
        raise FileFormatError(
            f"{path}: {actual - expected} trailing bytes after payload",
            offset=_HEADER.size + expected,
        )


def write_density(path, d: DensityMap) -> None:
    """Serialize a density map; values are narrowed to float32."""
    payload = np.ascontiguousarray(d.values, dtype="<f4").tobytes()
    header = _HEADER.pack(DENSITY_MAGIC, FORMAT_VERSION, d.height, d.width)
    Path(path).write_bytes(header + payload)


def read_density(path) -> DensityMap:
    """Load a density map, warning if it carries negative values.

    Negative entries are preserved as-is so external model outputs are
    evaluated faithfully; the warning flags them for the caller.
    """
    data = Path(path).read_bytes()
    height, width = _read_header(data, DENSITY_MAGIC, path)
    _check_payload(data, height * width * 4, path)
    values = np.frombuffer(data, dtype="<f4", count=height * width, offset=_HEADER.size)
    values = values.reshape(height, width).astype(np.float64)
    if values.size and values.min() < 0.0:
        warnings.warn(
            f"{path}: density map contains negative values (min {values.min():g})",
            NegativeDensityWarning,
            stacklevel=2,
        )
    return DensityMap(values)


def write_mask(path, m: BinaryMask) -> None:
    header = _HEADER.pack(MASK_MAGIC, FORMAT_VERSION, m.height, m.width)
    Path(path).write_bytes(header + np.ascontiguousarray(m.bits, dtype=np.uint8).tobytes())


def read_mask(path) -> BinaryMask:
    data = Path(path).read_bytes()
    height, width = _read_header(data, MASK_MAGIC, path)
    _check_payload(data, height * width, path)
    bits = np.frombuffer(data, dtype=np.uint8, count=height * width, offset=_HEADER.size)
    bad = np.flatnonzero(bits > 1)
    if bad.size:
        raise FileFormatError(
            f"{path}: mask byte {bits[bad[0]]} is not 0 or 1",
            offset=_HEADER.size + int(bad[0]),
        )
    return BinaryMask(bits.reshape(height, width).copy())
