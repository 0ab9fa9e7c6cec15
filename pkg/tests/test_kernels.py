"""Kernel builders and reference oracles."""

import numpy as np
import pytest

from tilelab.interp import interpret_functional
from tilelab.ir import Compute, Copy, ForTiles
from tilelab.kernels import (
    GeluVariant,
    build_gelu,
    build_vec_add_2d,
    ddr_shape,
    gelu,
    gelu_reference,
    make_inputs,
    max_tile_rows,
    reference_output,
    uniform_f32,
    vec_add_2d,
)
from tilelab.normal_form import match_normal_form


def test_default_vec_add_has_eight_tiles():
    m = build_vec_add_2d(vec_add_2d())
    assert isinstance(m.body[0], ForTiles)
    assert m.body[0].tile_count == 8  # 64 rows / 8 rows per tile


def test_one_row_tiles_give_sixty_four_tiles():
    m = build_vec_add_2d(vec_add_2d(rows=64, tile_rows=1))
    assert m.body[0].tile_count == 64


def test_tile_rows_larger_than_rows_rejected():
    with pytest.raises(ValueError):
        build_vec_add_2d(vec_add_2d(rows=4, tile_rows=8))


def test_capacity_bound_tile_height():
    # A 256 KiB scratchpad holds exactly one 64 KiB row per live buffer
    # (two inputs + one output), single-buffered.
    assert max_tile_rows(262144, 16384) == 1
    assert max_tile_rows(262144, 16384, double_buffered=True) == 0
    assert max_tile_rows(8_388_608, 16384) == 42
    with pytest.raises(ValueError):
        build_vec_add_2d(vec_add_2d(rows=64, tile_rows=2), tcm_capacity=262144)


def test_gelu_largest_sweep_point_shape():
    m = build_gelu(gelu(n=1_048_576))
    assert ddr_shape(gelu(n=1_048_576)) == (64, 16384)
    assert m.buffers[0].elems == 1_048_576
    assert m.body[0].tile_count == 64


def test_gelu_small_sizes_fold_into_one_tile():
    assert ddr_shape(gelu(n=4096)) == (1, 4096)
    assert build_gelu(gelu(n=4096)).body[0].tile_count == 1


def test_gelu_indivisible_size_rejected():
    with pytest.raises(ValueError, match="divide"):
        build_gelu(gelu(n=20000))


def test_gelu_capacity_check():
    with pytest.raises(ValueError, match="capacity"):
        build_gelu(gelu(), tcm_capacity=65536)


def test_gelu_point_values():
    x = np.array([0.0, 1.0, 8.0], dtype=np.float64)
    y = gelu_reference(x, GeluVariant.TANH)
    assert y[0] == 0.0
    assert round(float(y[1]), 6) == 0.841192
    assert abs(float(y[2]) - 8.0) < 1e-4


def test_tanh_and_erf_variants_agree_on_the_input_range():
    x = uniform_f32(11, 200_000).astype(np.float64)
    gap = np.abs(gelu_reference(x, GeluVariant.TANH) - gelu_reference(x, GeluVariant.ERF))
    assert float(gap.max()) < 3e-3


@pytest.mark.parametrize(
    "spec",
    [vec_add_2d(), vec_add_2d(rows=10, tile_rows=4), gelu(n=262144), gelu(n=262144, variant=GeluVariant.ERF)],
    ids=["vec-add", "vec-add-tail", "gelu-tanh", "gelu-erf"],
)
def test_reference_equals_scalar_interpreter(spec):
    m = build_vec_add_2d(spec) if spec.kind.value == "vec-add-2d" else build_gelu(spec)
    inputs = make_inputs(spec)
    got = interpret_functional(m, inputs)
    want = reference_output(spec, inputs)
    for name in want:
        assert np.array_equal(got[name], want[name])


def test_builders_emit_normal_form():
    assert match_normal_form(build_vec_add_2d(vec_add_2d())) is not None
    assert match_normal_form(build_gelu(gelu())) is not None
    assert match_normal_form(build_vec_add_2d(vec_add_2d(rows=10, tile_rows=4))) is not None


def test_output_tiles_partition_the_output_buffer():
    m = build_vec_add_2d(vec_add_2d())
    loop = m.body[0]
    copy_out = next(
        op for op in loop.body if isinstance(op, Copy) and op.dst.base == "C"
    )
    view = copy_out.dst
    assert abs(view.row_scale) >= view.row_count
    covered = set()
    for i in range(loop.tile_count):
        off = view.row_offset_at(i)
        rows = set(range(off, off + view.row_count))
        assert not rows & covered
        covered |= rows
    assert covered == set(range(m.buffers[2].rows))


def test_short_tail_tile_emitted_after_the_loop():
    m = build_vec_add_2d(vec_add_2d(rows=10, tile_rows=4))
    assert m.body[0].tile_count == 2
    tail_computes = [op for op in m.body[1:] if isinstance(op, Compute)]
    assert len(tail_computes) == 1
    assert tail_computes[0].output.elems == 2 * 16384
