"""Grid types and the sequential summation contract."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdbg.errors import GridShapeError, ParameterError
from crowdbg.grids import (
    BinaryMask,
    DensityMap,
    SoftMask,
    hadamard,
    masked_count,
    sequential_sum,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@st.composite
def grid_values(draw, max_side=8, min_side=0):
    h = draw(st.integers(min_side, max_side))
    w = draw(st.integers(min_side, max_side))
    vals = draw(st.lists(finite, min_size=h * w, max_size=h * w))
    return np.array(vals, dtype=np.float64).reshape(h, w)


def naive_sum(values):
    acc = 0.0
    for row in values:
        for v in row:
            acc += float(v)
    return acc


@given(grid_values())
def test_sequential_sum_is_bitwise_equal_to_a_python_loop(values):
    assert sequential_sum(values) == naive_sum(values)


def test_sequential_sum_empty_is_zero():
    assert sequential_sum(np.zeros((0, 0))) == 0.0
    assert sequential_sum(np.zeros((0, 5))) == 0.0


def test_sequential_sum_order_sensitivity_is_reproduced():
    # Catastrophic cancellation orders differently under pairwise summation;
    # the sequential contract pins one specific result.
    values = np.array([[1e16, 1.0, -1e16, 1.0]])
    assert sequential_sum(values) == ((1e16 + 1.0) - 1e16) + 1.0


@given(grid_values())
def test_masked_count_matches_double_loop_oracle(values):
    rng = np.random.default_rng(values.size)
    bits = rng.integers(0, 2, size=values.shape).astype(np.uint8)
    d = DensityMap(values)
    m = BinaryMask(bits)
    acc = 0.0
    for j in range(values.shape[0]):
        for k in range(values.shape[1]):
            acc += values[j, k] * bits[j, k]
    assert masked_count(d, m) == acc


def test_masked_count_rejects_shape_mismatch():
    with pytest.raises(GridShapeError):
        masked_count(DensityMap.zeros(2, 3), BinaryMask.all_ones(3, 2))


def test_density_map_requires_two_dims():
    with pytest.raises(GridShapeError):
        DensityMap(np.zeros(4))
    with pytest.raises(GridShapeError):
        DensityMap(np.zeros((2, 2, 2)))


def test_density_map_accepts_negative_values():
    d = DensityMap(np.array([[-0.5, 2.0]]))
    assert d.total() == 1.5


def test_density_map_is_immutable():
    d = DensityMap.zeros(2, 2)
    with pytest.raises(ValueError):
        d.values[0, 0] = 1.0


def test_binary_mask_rejects_non_binary_entries():
    with pytest.raises(ParameterError):
        BinaryMask(np.array([[0, 2]], dtype=np.uint8))


def test_binary_mask_complement_and_intersection():
    m = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
    assert np.array_equal(m.complement().complement().bits, m.bits)
    assert m.intersect(m.complement()).count_ones() == 0
    assert m.complement().count_ones() == 2
    assert BinaryMask.all_ones(4, 4).fraction() == 1.0
    assert BinaryMask.all_zeros(0, 0).fraction() == 0.0


def test_soft_mask_rejects_probabilities_outside_unit_interval():
    with pytest.raises(ParameterError):
        SoftMask(np.array([[1.5]]))
    with pytest.raises(ParameterError):
        SoftMask(np.array([[-0.1]]))


def test_hadamard_is_elementwise_product():
    d = DensityMap(np.array([[1.0, 2.0], [3.0, 4.0]]))
    s = SoftMask(np.array([[0.5, 1.0], [0.0, 0.25]]))
    out = hadamard(d, s)
    assert np.array_equal(out.values, np.array([[0.5, 2.0], [0.0, 1.0]]))
    ones = SoftMask.all_ones(2, 2)
    assert np.array_equal(hadamard(d, ones).values, d.values)
