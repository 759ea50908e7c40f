"""Input validation helpers, in the spirit of sklearn's ``check_array``.

These normalize raw user input (lists, mixed dtypes) into the canonical
internal representation: C-contiguous, row-major numpy arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import GridShapeError, ParameterError


def check_grid(values, name: str = "grid", dtype=np.float64) -> np.ndarray:
    """Coerce ``values`` to a 2-D C-contiguous array of ``dtype``.

    Zero-sized grids (e.g. 0x0) are allowed.
    """
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim != 2:
        raise GridShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def check_same_shape(a, b, op: str = "operation") -> None:
    """Raise GridShapeError unless the two grid-like objects match in H and W."""
    sa = (a.height, a.width) if hasattr(a, "height") else np.shape(a)
    sb = (b.height, b.width) if hasattr(b, "height") else np.shape(b)
    if sa != sb:
        raise GridShapeError(f"{op}: shape mismatch {sa} vs {sb}")


def check_binary(bits: np.ndarray, name: str = "mask") -> None:
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ParameterError(f"{name} must contain only 0 and 1")


def check_unit_interval(values: np.ndarray, name: str = "soft mask") -> None:
    if values.size and ((values < 0.0).any() or (values > 1.0).any()):
        raise ParameterError(f"{name} values must lie in [0, 1]")


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0.0:
        raise ParameterError(f"{name} must be > 0, got {value}")
    return value


def check_nonnegative(value, name: str) -> float:
    value = float(value)
    if not value >= 0.0:
        raise ParameterError(f"{name} must be >= 0, got {value}")
    return value
