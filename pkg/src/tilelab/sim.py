"""Deterministic discrete-event timed simulator of the modeled NPU.

Architecture: one control context runs the module top level, `threads`
worker contexts execute fork-join regions, and a single transfer channel
serves synchronous copies and asynchronous DMA in FIFO order.  Contexts are
Python generators yielding effects; the engine advances a single event heap
keyed by (time, creation sequence), so identical inputs replay identically,
bit for bit.

Costs: a transfer is dma_startup + ceil(bytes / dma_bandwidth) channel
cycles; a synchronous copy additionally blocks its context for the whole
queueing + transfer window; compute over E elements at vector factor v is
ceil(E / v) * ops_per_element unit cycles; fork_cost is charged on the
dispatching context per region and join_cost at every await-all barrier.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .interp import ArrayStore, Region, regions_overlap
from .ir import (
    AddToGroup,
    AllocTcm,
    AsyncExecute,
    AwaitAll,
    Compute,
    Copy,
    DeallocTcm,
    DmaStart,
    DmaWait,
    FlipToggle,
    Forall,
    ForTiles,
    IfToggle,
    Op,
    TileModule,
    expr_node_count,
    guard_allows,
)
from .machine import MachineConfig, TimingReport, compute_cycles, cycles_to_us, transfer_cycles


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    pass


Effect = tuple


class _Ctx:
    __slots__ = ("name", "gen", "worker", "block_start")

    def __init__(self, name: str, gen: Iterator[Effect]):
        self.name = name
        self.gen = gen
        self.worker: "_Worker | None" = None
        self.block_start = 0


class _Worker:
    __slots__ = ("index", "idle", "region_start", "busy")

    def __init__(self, index: int):
        self.index = index
        self.idle = True
        self.region_start = 0
        self.busy = 0


@dataclass(eq=False)  # identity semantics: the registry removes by object
class _Transfer:
    tag_id: int | None
    src: Region
    dst: Region
    done: int


@dataclass
class _Token:
    done: bool = False
    group: str | None = None


@dataclass
class _Group:
    members: set[str] = field(default_factory=set)
    waiter: _Ctx | None = None


class _Engine:
    def __init__(self, m: TileModule, inputs: dict[str, np.ndarray], cfg: MachineConfig):
        self.module = m
        self.cfg = cfg
        self.store = ArrayStore(m, inputs)
        self.heap: list[tuple[int, int, Callable[[int], None]]] = []
        self.seq = itertools.count()
        self.t_max = 0
        # One shared transfer channel, FIFO by request time.
        self.channel_free_at = 0
        self.dma_busy = 0
        self.in_flight: list[_Transfer] = []
        self.tag_waiters: dict[int, list[_Ctx]] = {}
        self.workers = [_Worker(i) for i in range(cfg.threads)]
        self.pending_regions: deque[_Ctx] = deque()
        self.tokens: dict[str, _Token] = {}
        self.groups: dict[str, _Group] = {}
        self.compute_busy = 0
        self.overhead = 0
        self.stall = 0
        self.main = _Ctx("control", self._exec_body(m.body, [], []))
        self.main_done = False

    # -- event heap ------------------------------------------------------- #

    def push(self, t: int, fn: Callable[[int], None]) -> None:
        heapq.heappush(self.heap, (t, next(self.seq), fn))

    def run(self) -> None:
        self.push(0, lambda t: self.resume(self.main, t))
        while self.heap:
            t, _, fn = heapq.heappop(self.heap)
            self.t_max = max(self.t_max, t)
            fn(t)
        if not self.main_done or any(not tok.done for tok in self.tokens.values()):
            blocked = [name for name, tok in self.tokens.items() if not tok.done]
            raise DeadlockError(
                "simulation deadlocked: no runnable context and the program is"
                f" incomplete (control done={self.main_done}, stuck regions={blocked})"
            )

    # -- transfer channel --------------------------------------------------- #

    def _channel_request(self, t: int, nbytes: int) -> int:
        cost = transfer_cycles(self.cfg, nbytes)
        start = max(t, self.channel_free_at)
        done = start + cost
        self.channel_free_at = done
        self.dma_busy += cost
        return done

    def _register_transfer(self, tr: _Transfer) -> None:
        self.in_flight.append(tr)

        def complete(t: int) -> None:
            self.in_flight.remove(tr)
            if tr.tag_id is not None and not any(
                x.tag_id == tr.tag_id for x in self.in_flight
            ):
                for ctx in self.tag_waiters.pop(tr.tag_id, []):
                    self.stall += t - ctx.block_start
                    self.push(t, lambda t2, c=ctx: self.resume(c, t2))

        self.push(tr.done, complete)

    def _check_hazards(self, t: int, reads: list[Region], writes: list[Region]) -> None:
        for tr in self.in_flight:
            if tr.done <= t:
                continue
            for r in reads:
                if regions_overlap(r, tr.dst):
                    raise SimulationError(
                        f"read of @{r[0]} rows [{r[1]}, {r[2]}) overlaps an"
                        f" in-flight transfer (tag {tr.tag_id})"
                    )
            for w in writes:
                if regions_overlap(w, tr.dst) or regions_overlap(w, tr.src):
                    raise SimulationError(
                        f"write to @{w[0]} rows [{w[1]}, {w[2]}) overlaps an"
                        f" in-flight transfer (tag {tr.tag_id})"
                    )

    # -- context scheduling -------------------------------------------------- #

    def resume(self, ctx: _Ctx, t: int) -> None:
        while True:
            try:
                eff = next(ctx.gen)
            except StopIteration:
                self._ctx_done(ctx, t)
                return
            kind = eff[0]
            if kind == "busy":
                _, cycles, bucket = eff
                if bucket == "compute":
                    self.compute_busy += cycles
                elif bucket == "overhead":
                    self.overhead += cycles
                self.push(t + cycles, lambda t2, c=ctx: self.resume(c, t2))
                return
            if kind == "copy":
                _, src, dst, nbytes = eff
                self._check_hazards(t, [src], [dst])
                done = self._channel_request(t, nbytes)
                self._register_transfer(_Transfer(None, src, dst, done))
                self.stall += done - t
                self.push(done, lambda t2, c=ctx: self.resume(c, t2))
                return
            if kind == "dma_start":
                _, src, dst, nbytes, tag_id = eff
                self._check_hazards(t, [src], [dst])
                done = self._channel_request(t, nbytes)
                self._register_transfer(_Transfer(tag_id, src, dst, done))
                continue
            if kind == "dma_wait":
                _, tag_id = eff
                if any(tr.tag_id == tag_id for tr in self.in_flight):
                    ctx.block_start = t
                    self.tag_waiters.setdefault(tag_id, []).append(ctx)
                    return
                continue
            if kind == "compute_guard":
                _, reads, writes = eff
                self._check_hazards(t, reads, writes)
                continue
            if kind == "spawn":
                _, token, gen = eff
                self.tokens[token] = _Token()
                self._dispatch(_Ctx(token, gen), t)
                continue
            if kind == "add_to_group":
                _, token, group = eff
                tok = self.tokens.get(token)
                if tok is None:
                    raise SimulationError(f"add_to_group of unknown token %{token}")
                tok.group = group
                g = self.groups.setdefault(group, _Group())
                g.members.add(token)
                continue
            if kind == "await_group":
                _, group = eff
                g = self.groups.setdefault(group, _Group())
                if self._group_done(g):
                    continue
                g.waiter = ctx
                return
            raise SimulationError(f"unknown effect {kind!r}")

    def _group_done(self, g: _Group) -> bool:
        return all(self.tokens[t].done for t in g.members)

    def _dispatch(self, ctx: _Ctx, t: int) -> None:
        for w in self.workers:
            if w.idle:
                self._start_region(w, ctx, t)
                return
        self.pending_regions.append(ctx)

    def _start_region(self, w: _Worker, ctx: _Ctx, t: int) -> None:
        w.idle = False
        w.region_start = t
        ctx.worker = w
        self.push(t, lambda t2, c=ctx: self.resume(c, t2))

    def _ctx_done(self, ctx: _Ctx, t: int) -> None:
        if ctx is self.main:
            self.main_done = True
            return
        w = ctx.worker
        w.busy += t - w.region_start
        tok = self.tokens[ctx.name]
        tok.done = True
        if tok.group is not None:
            g = self.groups[tok.group]
            if g.waiter is not None and self._group_done(g):
                waiter, g.waiter = g.waiter, None
                self.push(t, lambda t2, c=waiter: self.resume(c, t2))
        if self.pending_regions:
            self._start_region(w, self.pending_regions.popleft(), t)
        else:
            w.idle = True

    # -- op execution --------------------------------------------------------- #

    def _exec_body(
        self,
        body: tuple[Op, ...],
        ivs: list[tuple[str, int]],
        toggles: list[list[bool]],
    ) -> Iterator[Effect]:
        nearest = ivs[-1][1] if ivs else None
        for op in body:
            if not guard_allows(op, nearest):
                continue
            if isinstance(op, (ForTiles, Forall)):
                is_toggled = isinstance(op, ForTiles) and op.toggle_init is not None
                if is_toggled:
                    toggles.append([op.toggle_init])
                for v in range(op.tile_count):
                    ivs.append((op.iv, v))
                    yield from self._exec_body(op.body, ivs, toggles)
                    ivs.pop()
                if is_toggled:
                    toggles.pop()
            elif isinstance(op, IfToggle):
                if not toggles:
                    raise SimulationError("if_toggle outside a toggled loop")
                arm = op.then_body if toggles[-1][0] else op.else_body
                yield from self._exec_body(arm, ivs, toggles)
            elif isinstance(op, FlipToggle):
                if not toggles:
                    raise SimulationError("flip_toggle outside a toggled loop")
                toggles[-1][0] = not toggles[-1][0]
            elif isinstance(op, AllocTcm):
                self.store.alloc(op)
            elif isinstance(op, DeallocTcm):
                self.store.dealloc(op)
            elif isinstance(op, Copy):
                snapshot = tuple(ivs)
                src = self.store.region(op.src, snapshot)
                dst = self.store.region(op.dst, snapshot)
                self.store.write(op.dst, snapshot, self.store.read(op.src, snapshot))
                yield ("copy", src, dst, op.src.elems * 4)
            elif isinstance(op, DmaStart):
                snapshot = tuple(ivs)
                src = self.store.region(op.src, snapshot)
                dst = self.store.region(op.dst, snapshot)
                self.store.write(op.dst, snapshot, self.store.read(op.src, snapshot))
                yield ("dma_start", src, dst, op.src.elems * 4, op.tag.id)
            elif isinstance(op, DmaWait):
                yield ("dma_wait", op.tag.id)
            elif isinstance(op, Compute):
                snapshot = tuple(ivs)
                reads = [self.store.region(v, snapshot) for v in op.inputs]
                writes = [self.store.region(op.output, snapshot)]
                yield ("compute_guard", reads, writes)
                self.store.run_compute(op, snapshot)
                cost = compute_cycles(
                    self.cfg,
                    op.output.elems,
                    expr_node_count(op.expr) + 1,
                    op.vector_factor,
                )
                yield ("busy", cost, "compute")
            elif isinstance(op, AsyncExecute):
                yield ("busy", self.cfg.fork_cost, "overhead")
                region_gen = self._exec_body(
                    op.body, list(ivs), [list(c) for c in toggles]
                )
                yield ("spawn", op.token, region_gen)
            elif isinstance(op, AddToGroup):
                yield ("add_to_group", op.token, op.group)
            elif isinstance(op, AwaitAll):
                yield ("await_group", op.group)
                yield ("busy", self.cfg.join_cost, "overhead")
            else:
                raise SimulationError(f"unknown op {op!r}")


def simulate_timed(
    m: TileModule, inputs: dict[str, np.ndarray], cfg: MachineConfig
) -> tuple[dict[str, np.ndarray], TimingReport]:
    """Runs the module on the timed machine model; returns the written DDR
    buffers (bit-identical to the functional interpreter for hazard-free
    modules) and the latency report."""
    engine = _Engine(m, inputs, cfg)
    engine.run()
    report = TimingReport(
        total_cycles=engine.t_max,
        total_us=cycles_to_us(engine.t_max, cfg),
        compute_busy_cycles=engine.compute_busy,
        dma_busy_cycles=engine.dma_busy,
        stall_cycles=engine.stall,
        overhead_cycles=engine.overhead,
        per_thread_busy=tuple(w.busy for w in engine.workers),
    )
    return engine.store.outputs(), report
