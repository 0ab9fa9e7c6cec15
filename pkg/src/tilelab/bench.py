"""Benchmark harness: the ablation ladder and the size sweep.

Every rung is rebuilt from the same kernel spec, transformed, verified,
and simulated; a report is only produced when every rung's outputs match
the scalar rung (exactly for vec-add, within 1e-6 relative for GELU).
Bundled reference numbers from a hardware measurement of the same ladder
ride along as metadata for qualitative comparison; the simulator makes no
attempt to reproduce absolute microseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from decimal import Decimal, ROUND_HALF_EVEN

import numpy as np

from .interp import interpret_functional
from .kernels import KernelKind, KernelSpec, build_kernel, make_inputs, reference_output
from .machine import (
    KernelStats,
    LadderRung,
    MachineConfig,
    RUNG_ORDER,
    TimingReport,
    collect_stats,
    latency_lower_bound,
)
from .passes import MtPolicy, MtProfitability, PipelineSpec, run_pipeline
from .sim import simulate_timed
from .verifier import verify_module

GELU_RTOL = 1e-6

HARDWARE_REFERENCE_LADDER = {
    "latency_us": {"scalar": 132479.0, "vec": 3210.0, "vec-mt": 3000.0, "vec-mt-db": 2689.0},
    "ratios": {"scalar/vec": 41.3, "vec/vec-mt": 1.07, "vec-mt/vec-mt-db": 1.12},
}

HARDWARE_REFERENCE_SWEEP_POINT = {
    "n_elements": 1_048_576,
    "single_us": 12947.0,
    "multi_us": 3313.0,
    "speedup": 3.91,
}

DEFAULT_SWEEP_SIZES = tuple(4096 * (1 << k) for k in range(9))  # 4096 .. 1,048,576


class BenchError(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class LadderRow:
    rung: str
    latency_us: float
    speedup_vs_scalar: float


@dataclass(frozen=True, slots=True)
class LadderReport:
    kernel: KernelSpec
    machine: MachineConfig
    rows: tuple[LadderRow, ...]
    hardware_reference: dict

    @property
    def machine_digest(self) -> str:
        return self.machine.digest


@dataclass(frozen=True, slots=True)
class SweepPoint:
    n_elements: int
    single_us: float
    multi_us: float
    speedup: float


@dataclass(frozen=True, slots=True)
class SweepReport:
    kernel: KernelSpec
    machine: MachineConfig
    points: tuple[SweepPoint, ...]
    hardware_reference: dict

    @property
    def machine_digest(self) -> str:
        return self.machine.digest


def round3(value: float) -> float:
    """Reporting precision: half-even at 3 decimal places."""
    return float(Decimal(repr(value)).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def pipeline_for(rung: LadderRung, cfg: MachineConfig) -> PipelineSpec:
    return PipelineSpec(
        rung=rung,
        lanes=cfg.lanes,
        mt=MtPolicy(threads=cfg.threads),
        profitability=MtProfitability(),
    )


def outputs_match(kind: KernelKind, got: dict, want: dict) -> bool:
    if set(got) != set(want):
        return False
    for name in want:
        if kind is KernelKind.VEC_ADD_2D:
            if not np.array_equal(got[name], want[name]):
                return False
        else:
            if not np.allclose(got[name], want[name], rtol=GELU_RTOL, atol=0.0):
                return False
    return True


@dataclass(frozen=True, slots=True)
class RungRun:
    rung: LadderRung
    outputs: dict
    timing: TimingReport
    stats: KernelStats
    lower_bound: int


def run_rung(
    kernel: KernelSpec,
    rung: LadderRung,
    cfg: MachineConfig,
    inputs: dict | None = None,
) -> RungRun:
    """Build -> transform -> verify -> simulate for one rung."""
    base = build_kernel(kernel, tcm_capacity=cfg.tcm_capacity)
    module = run_pipeline(base, pipeline_for(rung, cfg))
    diagnostics = verify_module(module, cfg)
    if diagnostics:
        raise BenchError(
            f"rung {rung.value}: transformed module failed verification: {diagnostics[0]}"
        )
    if inputs is None:
        inputs = make_inputs(kernel)
    outputs, timing = simulate_timed(module, inputs, cfg)
    stats = collect_stats(base)
    return RungRun(rung, outputs, timing, stats, latency_lower_bound(stats, cfg, rung))


def run_ladder(kernel: KernelSpec, cfg: MachineConfig) -> LadderReport:
    """All four rungs on one kernel, gated on functional equivalence with the
    scalar rung."""
    inputs = make_inputs(kernel)
    runs: list[RungRun] = []
    for rung in RUNG_ORDER:
        try:
            runs.append(run_rung(kernel, rung, cfg, inputs))
        except Exception as exc:
            raise BenchError(f"rung {rung.value} failed: {exc}") from exc
    scalar_outputs = runs[0].outputs
    for run in runs[1:]:
        if not outputs_match(kernel.kind, run.outputs, scalar_outputs):
            raise BenchError(
                f"rung {run.rung.value}: outputs diverge from the scalar rung; report aborted"
            )
    scalar_us = runs[0].timing.total_us
    rows = tuple(
        LadderRow(
            rung=run.rung.value,
            latency_us=run.timing.total_us,
            speedup_vs_scalar=round3(scalar_us / run.timing.total_us),
        )
        for run in runs
    )
    return LadderReport(kernel, cfg, rows, HARDWARE_REFERENCE_LADDER)


def run_sweep(kernel: KernelSpec, sizes: tuple[int, ...], cfg: MachineConfig) -> SweepReport:
    """Single-thread (vec) vs multi-thread (vec+mt) latency per problem size."""
    if kernel.kind is not KernelKind.GELU:
        raise BenchError("the size sweep is defined for the gelu kernel")
    if not sizes:
        raise BenchError("sweep sizes must be nonempty")
    if list(sizes) != sorted(set(sizes)):
        raise BenchError("sweep sizes must be strictly ascending")
    points: list[SweepPoint] = []
    for n in sizes:
        spec_n = replace(kernel, cols=n)
        inputs = make_inputs(spec_n)
        single = run_rung(spec_n, LadderRung.VEC, cfg, inputs)
        multi = run_rung(spec_n, LadderRung.VEC_MT, cfg, inputs)
        if not outputs_match(kernel.kind, multi.outputs, single.outputs):
            raise BenchError(f"sweep point {n}: multi-thread outputs diverge; report aborted")
        single_us = single.timing.total_us
        multi_us = multi.timing.total_us
        points.append(SweepPoint(n, single_us, multi_us, round3(single_us / multi_us)))
    return SweepReport(kernel, cfg, tuple(points), HARDWARE_REFERENCE_SWEEP_POINT)


def functional_check(kernel: KernelSpec, rung: LadderRung, cfg: MachineConfig) -> list[str]:
    """End-to-end equivalence for one (kernel, rung): interpreter vs timed
    simulator vs double-precision reference.  Returns failure descriptions."""
    failures: list[str] = []
    base = build_kernel(kernel, tcm_capacity=cfg.tcm_capacity)
    module = run_pipeline(base, pipeline_for(rung, cfg))
    diagnostics = verify_module(module, cfg)
    if diagnostics:
        return [f"verifier: {d}" for d in diagnostics]
    inputs = make_inputs(kernel)
    interp_out = interpret_functional(module, inputs)
    sim_out, _ = simulate_timed(module, inputs, cfg)
    ref = reference_output(kernel, inputs)
    for name in ref:
        if not np.array_equal(interp_out[name], sim_out[name]):
            failures.append(f"@{name}: interpreter and simulator outputs differ")
        if not outputs_match(kernel.kind, {name: sim_out[name]}, {name: ref[name]}):
            failures.append(f"@{name}: simulator output diverges from the reference")
    return failures
