"""Core grid types and elementwise operations.

A density map is a real-valued H x W grid whose sum over a region is a
person count. A binary mask selects the region; a soft mask holds
post-sigmoid probabilities used for modulation.

All three types are immutable after construction (the backing arrays are
marked read-only) and safe to share across threads. Operations are pure.

Reproducibility contract: every count in this package is accumulated in
sequential row-major order, with no pairwise or compensated summation, so
that results are bit-identical to a naive double loop over (row, col).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridShapeError
from .validation import check_binary, check_grid, check_same_shape, check_unit_interval


def sequential_sum(values: np.ndarray) -> float:
    """Sum in strict left-to-right order over the flattened row-major array.

    ``np.cumsum`` materializes every prefix sum, so its last entry equals a
    sequential ``acc += x`` loop bit-for-bit (unlike ``np.sum``, which uses
    pairwise summation).
    """
    flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        return 0.0
    return float(np.cumsum(flat)[-1])


@dataclass(frozen=True, eq=False)
class DensityMap:
    """Row-major H x W grid of per-pixel person density, float64 internally."""

    values: np.ndarray

    def __post_init__(self):
        arr = check_grid(self.values, "density map")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "DensityMap":
        return cls(np.zeros((height, width), dtype=np.float64))

    def total(self) -> float:
        """Total count: sum over all pixels in row-major sequential order."""
        return sequential_sum(self.values)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major H x W grid over {0, 1} selecting an evaluation region."""

    bits: np.ndarray

    def __post_init__(self):
        arr = check_grid(self.bits, "mask", dtype=np.uint8)
        check_binary(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def all_ones(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=np.uint8))

    @classmethod
    def all_zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def complement(self) -> "BinaryMask":
        return BinaryMask(1 - self.bits)

    def intersect(self, other: "BinaryMask") -> "BinaryMask":
        check_same_shape(self, other, "mask intersection")
        return BinaryMask(self.bits & other.bits)

    def count_ones(self) -> int:
        return int(self.bits.sum())

    def fraction(self) -> float:
        """Fraction of selected pixels; 0.0 for empty grids."""
        if self.bits.size == 0:
            return 0.0
        return self.count_ones() / self.bits.size


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Row-major H x W grid of probabilities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = check_grid(self.values, "soft mask")
        check_unit_interval(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def all_ones(cls, height: int, width: int) -> "SoftMask":
        return cls(np.ones((height, width), dtype=np.float64))


def masked_count(d: DensityMap, m: BinaryMask) -> float:
    """Count restricted to a region: sum of d(j,k) * m(j,k).

    Summation runs in fixed row-major sequential order so the result is
    bit-identical to a brute-force double loop.
    """
    if (d.height, d.width) != (m.height, m.width):
        raise GridShapeError(
            f"masked_count: density {d.height}x{d.width} vs mask {m.height}x{m.width}"
        )
    return sequential_sum(d.values * m.bits)


def hadamard(d: DensityMap, m: SoftMask) -> DensityMap:
    """Elementwise product of a density map with a soft mask."""
    check_same_shape(d, m, "hadamard")
    return DensityMap(d.values * m.values)
