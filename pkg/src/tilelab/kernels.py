"""Benchmark kernel builders, reference oracles, and deterministic inputs.

Two kernels: a bandwidth-heavy 2D vector addition and the GELU activation
(tanh approximation by default, erf variant for cross-checking).  Builders
emit untransformed modules in the single-buffered normal form; inputs come
from a SplitMix64 stream so identical seeds give identical arrays on every
platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erf as _erf

from .ir import (
    AllocTcm,
    Binary,
    BufferDecl,
    Compute,
    Const,
    Copy,
    DeallocTcm,
    Expr,
    ForTiles,
    Input,
    MemSpace,
    Op,
    TileModule,
    Unary,
    ViewRef,
    full_view,
)


class KernelKind(str, Enum):
    VEC_ADD_2D = "vec-add-2d"
    GELU = "gelu"


class GeluVariant(str, Enum):
    TANH = "tanh"
    ERF = "erf"


SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC_COEFF = 0.044715
INV_SQRT_2 = 0.7071067811865476

INPUT_LO = -4.0
INPUT_HI = 4.0


@dataclass(frozen=True, slots=True)
class KernelSpec:
    kind: KernelKind
    rows: int = 64
    cols: int = 16384
    tile_rows: int = 8
    tile_elems: int = 16384
    gelu_variant: GeluVariant = GeluVariant.TANH
    seed: int = 1

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "rows": self.rows,
            "cols": self.cols,
            "tile_rows": self.tile_rows,
            "tile_elems": self.tile_elems,
            "gelu_variant": self.gelu_variant.value,
            "seed": self.seed,
        }


def vec_add_2d(rows: int = 64, cols: int = 16384, tile_rows: int = 8, seed: int = 1) -> KernelSpec:
    return KernelSpec(KernelKind.VEC_ADD_2D, rows=rows, cols=cols, tile_rows=tile_rows, seed=seed)


def gelu(
    n: int = 1_048_576,
    tile_elems: int = 16384,
    variant: GeluVariant = GeluVariant.TANH,
    seed: int = 1,
) -> KernelSpec:
    return KernelSpec(
        KernelKind.GELU, rows=1, cols=n, tile_elems=tile_elems, gelu_variant=variant, seed=seed
    )


# --------------------------------------------------------------------------- #
# Deterministic inputs (SplitMix64)
# --------------------------------------------------------------------------- #

_SM_GAMMA = 0x9E3779B97F4A7C15
_SM_MIX1 = 0xBF58476D1CE4E5B9
_SM_MIX2 = 0x94D049BB133111EB
_U64 = (1 << 64) - 1


def splitmix64_values(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Stream values [offset, offset + count) of SplitMix64(seed), vectorized;
    the state advance is linear so any window evaluates directly."""
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = np.uint64(seed & _U64) + idx * np.uint64(_SM_GAMMA)
        z = (x ^ (x >> np.uint64(30))) * np.uint64(_SM_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_SM_MIX2)
        return z ^ (z >> np.uint64(31))


def uniform_f32(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """F32 values uniform in [-4, 4) from the top 24 bits of the stream;
    every value is exactly representable, so the arrays are platform-stable."""
    bits = splitmix64_values(seed, count, offset) >> np.uint64(40)
    u = bits.astype(np.float64) / float(1 << 24)
    return (INPUT_LO + (INPUT_HI - INPUT_LO) * u).astype(np.float32)


def make_inputs(spec: KernelSpec, seed: int | None = None) -> dict[str, np.ndarray]:
    """Named input arrays shaped like the module's DDR declarations."""
    seed = spec.seed if seed is None else seed
    shape = ddr_shape(spec)
    count = shape[0] * shape[1]
    if spec.kind is KernelKind.VEC_ADD_2D:
        return {
            "A": uniform_f32(seed, count).reshape(shape),
            "B": uniform_f32(seed, count, offset=count).reshape(shape),
        }
    return {"X": uniform_f32(seed, count).reshape(shape)}


# --------------------------------------------------------------------------- #
# Expressions
# --------------------------------------------------------------------------- #


def vec_add_expr() -> Expr:
    return Binary("add", Input(0), Input(1))


def gelu_expr(variant: GeluVariant = GeluVariant.TANH) -> Expr:
    x = Input(0)
    if variant is GeluVariant.TANH:
        cubic = Binary("mul", Const(GELU_CUBIC_COEFF), Binary("mul", x, Binary("mul", x, x)))
        inner = Binary("mul", Const(SQRT_2_OVER_PI), Binary("add", x, cubic))
        gate = Binary("add", Const(1.0), Unary("tanh", inner))
    else:
        gate = Binary("add", Const(1.0), Unary("erf", Binary("mul", x, Const(INV_SQRT_2))))
    return Binary("mul", Const(0.5), Binary("mul", x, gate))


# --------------------------------------------------------------------------- #
# Builders
# --------------------------------------------------------------------------- #


def ddr_shape(spec: KernelSpec) -> tuple[int, int]:
    """Declared DDR buffer shape.  The 1D GELU array is laid out tile-major,
    one tile per row, so whole-row views address any tile."""
    if spec.kind is KernelKind.VEC_ADD_2D:
        return (spec.rows, spec.cols)
    n = spec.cols
    eff = min(spec.tile_elems, n)
    if n % eff != 0:
        raise ValueError(f"tile_elems {spec.tile_elems} must divide the element count {n}")
    return (n // eff, eff)


def _normal_form_tile(
    inputs: list[tuple[str, ViewRef, BufferDecl]],
    output: tuple[str, ViewRef, BufferDecl],
    expr: Expr,
) -> tuple[Op, ...]:
    ops: list[Op] = []
    for _, ddr_view, decl in inputs:
        ops.append(AllocTcm(decl))
        ops.append(Copy(src=ddr_view, dst=full_view(decl)))
    _, out_view, out_decl = output
    ops.append(AllocTcm(out_decl))
    ops.append(
        Compute(
            inputs=tuple(full_view(d) for _, _, d in inputs),
            output=full_view(out_decl),
            expr=expr,
            vector_factor=1,
        )
    )
    ops.append(Copy(src=full_view(out_decl), dst=out_view))
    for _, _, decl in inputs:
        ops.append(DeallocTcm(decl.id))
    ops.append(DeallocTcm(out_decl.id))
    return tuple(ops)


def build_vec_add_2d(spec: KernelSpec, tcm_capacity: int | None = None) -> TileModule:
    """C = A + B over whole-row tiles of tile_rows rows.  When tile_rows does
    not divide the row count, a short final tile is peeled after the loop."""
    if spec.kind is not KernelKind.VEC_ADD_2D:
        raise ValueError(f"expected a vec-add-2d spec, got {spec.kind.value}")
    if spec.tile_rows < 1 or spec.tile_rows > spec.rows:
        raise ValueError(f"tile_rows {spec.tile_rows} must be in [1, rows={spec.rows}]")

    rows, cols = spec.rows, spec.cols
    tile_rows = spec.tile_rows
    full_tiles = rows // tile_rows
    tail_rows = rows % tile_rows

    if tcm_capacity is not None:
        footprint = 3 * tile_rows * cols * 4
        if footprint > tcm_capacity:
            raise ValueError(
                f"tile of {tile_rows} rows needs {footprint} tcm bytes"
                f" (> capacity {tcm_capacity}); reduce tile_rows"
            )

    buffers = tuple(BufferDecl(b, MemSpace.DDR, rows, cols) for b in ("A", "B", "C"))

    def tcm(name: str, r: int) -> BufferDecl:
        return BufferDecl(name, MemSpace.TCM, r, cols)

    body: list[Op] = [
        ForTiles(
            "i",
            full_tiles,
            _normal_form_tile(
                inputs=[
                    ("A", ViewRef("A", tile_rows, 0, tile_rows, cols), tcm("tA", tile_rows)),
                    ("B", ViewRef("B", tile_rows, 0, tile_rows, cols), tcm("tB", tile_rows)),
                ],
                output=("C", ViewRef("C", tile_rows, 0, tile_rows, cols), tcm("tC", tile_rows)),
                expr=vec_add_expr(),
            ),
        )
    ]
    if tail_rows:
        off = full_tiles * tile_rows
        body.extend(
            _normal_form_tile(
                inputs=[
                    ("A", ViewRef("A", 0, off, tail_rows, cols), tcm("tA_tail", tail_rows)),
                    ("B", ViewRef("B", 0, off, tail_rows, cols), tcm("tB_tail", tail_rows)),
                ],
                output=("C", ViewRef("C", 0, off, tail_rows, cols), tcm("tC_tail", tail_rows)),
                expr=vec_add_expr(),
            )
        )
    return TileModule("vec-add-2d", buffers, tuple(body), kernel=spec, rung="scalar")


def build_gelu(spec: KernelSpec, tcm_capacity: int | None = None) -> TileModule:
    """Y = GELU(X) over flat tiles of tile_elems elements.  Resident tiles are
    shaped (8, tile_elems / 8) when possible so the compute region can later
    be split into per-row sub-tiles."""
    if spec.kind is not KernelKind.GELU:
        raise ValueError(f"expected a gelu spec, got {spec.kind.value}")
    if spec.rows != 1:
        raise ValueError("gelu is one-dimensional: spec.rows must be 1")
    tiles, eff = ddr_shape(spec)

    if tcm_capacity is not None:
        footprint = 2 * eff * 4
        if footprint > tcm_capacity:
            raise ValueError(
                f"tile of {eff} elements needs {footprint} tcm bytes"
                f" (> capacity {tcm_capacity}); reduce tile_elems"
            )

    sub_rows = 8 if eff % 8 == 0 else 1
    buffers = (
        BufferDecl("X", MemSpace.DDR, tiles, eff),
        BufferDecl("Y", MemSpace.DDR, tiles, eff),
    )
    t_x = BufferDecl("tX", MemSpace.TCM, sub_rows, eff // sub_rows)
    t_y = BufferDecl("tY", MemSpace.TCM, sub_rows, eff // sub_rows)
    loop = ForTiles(
        "i",
        tiles,
        _normal_form_tile(
            inputs=[("X", ViewRef("X", 1, 0, 1, eff), t_x)],
            output=("Y", ViewRef("Y", 1, 0, 1, eff), t_y),
            expr=gelu_expr(spec.gelu_variant),
        ),
    )
    return TileModule("gelu", buffers, (loop,), kernel=spec, rung="scalar")


def build_kernel(spec: KernelSpec, tcm_capacity: int | None = None) -> TileModule:
    if spec.kind is KernelKind.VEC_ADD_2D:
        return build_vec_add_2d(spec, tcm_capacity)
    return build_gelu(spec, tcm_capacity)


def max_tile_rows(
    capacity: int, cols: int, n_buffers: int = 3, double_buffered: bool = False
) -> int:
    """Largest whole-row tile height whose working set fits the scratchpad."""
    per_row = cols * 4 * n_buffers * (2 if double_buffered else 1)
    return capacity // per_row


# --------------------------------------------------------------------------- #
# Reference oracle
# --------------------------------------------------------------------------- #


def gelu_reference(x64: np.ndarray, variant: GeluVariant) -> np.ndarray:
    """Double-precision GELU with the same association as the expression tree."""
    if variant is GeluVariant.TANH:
        cubic = GELU_CUBIC_COEFF * (x64 * (x64 * x64))
        return 0.5 * (x64 * (1.0 + np.tanh(SQRT_2_OVER_PI * (x64 + cubic))))
    return 0.5 * (x64 * (1.0 + _erf(x64 * INV_SQRT_2)))


def reference_output(spec: KernelSpec, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Element-by-element double-precision evaluation, rounded to f32 once at
    the end; no tiling and no IR."""
    shape = ddr_shape(spec)
    if spec.kind is KernelKind.VEC_ADD_2D:
        a, b = np.asarray(inputs["A"]), np.asarray(inputs["B"])
        if a.shape != shape or b.shape != shape:
            raise ValueError(f"inputs must have shape {shape}, got {a.shape} and {b.shape}")
        c = a.astype(np.float64) + b.astype(np.float64)
        return {"C": c.astype(np.float32)}
    x = np.asarray(inputs["X"])
    if x.shape != shape:
        raise ValueError(f"input must have shape {shape}, got {x.shape}")
    y = gelu_reference(x.astype(np.float64), spec.gelu_variant)
    return {"Y": y.astype(np.float32)}
