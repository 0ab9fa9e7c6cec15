"""Double buffering: structural pipelining (stage 1) and async DMA (stage 2)."""

import numpy as np
import pytest

from tilelab.interp import interpret_functional
from tilelab.ir import (
    ANCHOR_COMPUTE,
    ANCHOR_PREFETCH,
    ANCHOR_STOREBACK,
    AllocTcm,
    Compute,
    Copy,
    DmaStart,
    DmaWait,
    IfToggle,
    TagRole,
    dynamic_schedule,
    walk_module,
)
from tilelab.kernels import build_vec_add_2d, make_inputs, reference_output, vec_add_2d
from tilelab.machine import MachineConfig
from tilelab.passes import PassError, db_stage1, db_stage2
from tilelab.verifier import verify_module

CFG = MachineConfig()


def _build(tiles):
    return build_vec_add_2d(vec_add_2d(rows=tiles, tile_rows=1))


# -- stage 1 ------------------------------------------------------------------ #


@pytest.mark.parametrize("tiles", [1, 2, 3, 8])
def test_dynamic_prefetch_count_equals_tile_count(tiles):
    m = db_stage1(_build(tiles))
    per_buffer: dict[str, int] = {}
    for op, _ in dynamic_schedule(m):
        if isinstance(op, Copy) and op.anchor == ANCHOR_PREFETCH:
            per_buffer[op.dst.base] = per_buffer.get(op.dst.base, 0) + 1
    # One prefetch per tile per input stream, split across ping/pong buffers.
    assert per_buffer.pop("tA_ping", 0) + per_buffer.pop("tA_pong", 0) == tiles
    assert per_buffer.pop("tB_ping", 0) + per_buffer.pop("tB_pong", 0) == tiles
    assert per_buffer == {}


def test_single_tile_loop_issues_no_inloop_prefetch():
    m = db_stage1(_build(1))
    in_loop = [
        op
        for op, ivs in dynamic_schedule(m)
        if isinstance(op, Copy) and op.anchor == ANCHOR_PREFETCH and ivs
    ]
    assert in_loop == []


def test_footprint_doubles():
    base = _build(8)
    before = sum(
        op.decl.nbytes for _, op in walk_module(base) if isinstance(op, AllocTcm)
    )
    after = sum(
        op.decl.nbytes for _, op in walk_module(db_stage1(base)) if isinstance(op, AllocTcm)
    )
    assert after == 2 * before


def test_all_three_anchor_roles_present():
    anchors = {op.anchor for _, op in walk_module(db_stage1(_build(8))) if op.anchor}
    assert anchors == {ANCHOR_PREFETCH, ANCHOR_COMPUTE, ANCHOR_STOREBACK}


def test_stage1_rejects_its_own_output():
    once = db_stage1(_build(8))
    with pytest.raises(PassError, match="normal form"):
        db_stage1(once)


def test_stage1_preserves_semantics():
    for tiles in (1, 2, 3, 8):
        spec = vec_add_2d(rows=tiles, tile_rows=1)
        m = db_stage1(build_vec_add_2d(spec))
        inputs = make_inputs(spec)
        assert np.array_equal(
            interpret_functional(m, inputs)["C"], reference_output(spec, inputs)["C"]
        )


# -- stage 2 ------------------------------------------------------------------ #


def _arm_bodies(m):
    for _, op in walk_module(m):
        if isinstance(op, IfToggle):
            return op.then_body, op.else_body
    raise AssertionError("no pipelined loop found")


def test_waits_sit_immediately_before_compute():
    m = db_stage2(db_stage1(_build(8)))
    for arm in _arm_bodies(m):
        compute_at = next(i for i, op in enumerate(arm) if isinstance(op, Compute))
        input_bases = {v.base for v in arm[compute_at].inputs}
        wait_tags = set()
        i = compute_at - 1
        while i >= 0 and isinstance(arm[i], DmaWait):
            wait_tags.add(arm[i].tag.id)
            i -= 1
        start_tag_by_dst = {
            op.dst.base: op.tag.id for _, op in walk_module(m) if isinstance(op, DmaStart)
        }
        for base in input_bases:
            assert start_tag_by_dst[base] in wait_tags


def test_ping_and_pong_tags_distinct_per_stream():
    m = db_stage2(db_stage1(_build(8)))
    tags = {op.dst.base: op.tag for _, op in walk_module(m) if isinstance(op, DmaStart)}
    assert tags["tA_ping"].id != tags["tA_pong"].id
    assert tags["tA_ping"].role is TagRole.PING
    assert tags["tA_pong"].role is TagRole.PONG
    storeback = {
        op.src.base: op.tag
        for _, op in walk_module(m)
        if isinstance(op, DmaStart) and op.anchor == ANCHOR_STOREBACK
    }
    assert storeback["tC_ping"].id != storeback["tC_pong"].id
    assert storeback["tC_ping"].role is TagRole.STOREBACK


@pytest.mark.parametrize("tiles", [1, 2, 3, 8])
def test_tag_balance_on_the_dynamic_path(tiles):
    m = db_stage2(db_stage1(_build(tiles)))
    starts: dict[int, int] = {}
    waits: dict[int, int] = {}
    for op, _ in dynamic_schedule(m):
        if isinstance(op, DmaStart):
            starts[op.tag.id] = starts.get(op.tag.id, 0) + 1
        elif isinstance(op, DmaWait):
            waits[op.tag.id] = waits.get(op.tag.id, 0) + 1
    assert starts == waits
    assert verify_module(m, CFG) == []


def test_stage2_requires_anchors():
    with pytest.raises(PassError, match="anchor"):
        db_stage2(_build(8))


def test_synchronous_storeback_variant():
    m = db_stage2(db_stage1(_build(8)), storeback_async=False)
    storebacks = [
        op for _, op in walk_module(m) if op.anchor == ANCHOR_STOREBACK
    ]
    assert storebacks and all(isinstance(op, Copy) for op in storebacks)
    assert verify_module(m, CFG) == []
    spec = vec_add_2d(rows=8, tile_rows=1)
    inputs = make_inputs(spec)
    assert np.array_equal(
        interpret_functional(m, inputs)["C"], reference_output(spec, inputs)["C"]
    )


@pytest.mark.parametrize("tiles", [1, 3, 8])
def test_stage2_preserves_semantics(tiles):
    spec = vec_add_2d(rows=tiles, tile_rows=1)
    m = db_stage2(db_stage1(build_vec_add_2d(spec)))
    inputs = make_inputs(spec)
    assert np.array_equal(
        interpret_functional(m, inputs)["C"], reference_output(spec, inputs)["C"]
    )
