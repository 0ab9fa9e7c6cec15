"""Vectorize: lane widening with scalar epilogue splitting."""

import numpy as np
import pytest

from tilelab.interp import interpret_functional
from tilelab.ir import Compute, walk_module
from tilelab.kernels import build_vec_add_2d, make_inputs, reference_output, vec_add_2d
from tilelab.passes import PassError, vectorize


def _computes(m):
    return [op for _, op in walk_module(m) if isinstance(op, Compute)]


def test_exact_multiple_no_epilogue():
    m = vectorize(build_vec_add_2d(vec_add_2d()), 32)
    computes = _computes(m)
    assert len(computes) == 1
    assert computes[0].vector_factor == 32
    assert computes[0].output.elems == 8 * 16384  # 16384 = 512 * 32 per row


def test_remainder_splits_into_vector_plus_scalar_epilogue():
    # 100 elements at 32 lanes: floor(100/32)*32 = 96 vector + 4 scalar.
    base = build_vec_add_2d(vec_add_2d(rows=100, cols=1, tile_rows=100))
    m = vectorize(base, 32)
    computes = _computes(m)
    assert [(c.vector_factor, c.output.elems) for c in computes] == [(32, 96), (1, 4)]
    assert computes[1].output.row_base == 96


def test_epilogue_split_preserves_semantics():
    spec = vec_add_2d(rows=100, cols=1, tile_rows=100)
    m = vectorize(build_vec_add_2d(spec), 32)
    inputs = make_inputs(spec)
    out = interpret_functional(m, inputs)
    assert np.array_equal(out["C"], reference_output(spec, inputs)["C"])


def test_sub_vector_compute_stays_scalar():
    base = build_vec_add_2d(vec_add_2d(rows=3, cols=1, tile_rows=3))
    computes = _computes(vectorize(base, 32))
    assert [(c.vector_factor, c.output.elems) for c in computes] == [(1, 3)]


def test_lanes_one_is_identity():
    base = build_vec_add_2d(vec_add_2d())
    assert vectorize(base, 1) is base


def test_zero_lanes_rejected():
    with pytest.raises(PassError):
        vectorize(build_vec_add_2d(vec_add_2d()), 0)


def test_already_vectorized_rejected():
    m = vectorize(build_vec_add_2d(vec_add_2d()), 32)
    with pytest.raises(PassError):
        vectorize(m, 32)


def test_unsplittable_remainder_rejected():
    # 3 rows x 40 cols = 120 elements; split point 96 is mid-row.
    base = build_vec_add_2d(vec_add_2d(rows=3, cols=40, tile_rows=3))
    with pytest.raises(PassError):
        vectorize(base, 32)
