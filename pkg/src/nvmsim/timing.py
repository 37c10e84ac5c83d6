"""Cycle cost model of accelerator jobs and whole layers.

A *job* is one spatial output tile (6x6 for 3x3 modes, 8x8 for 1x1) times
one resident output group. A *task* is a sequence of jobs started by a
single offload; it pays ``launch`` once. Within a job::

    total = first_prefetch + max(execute, overlapped traffic) + normquant + streamout

where the overlapped traffic is the prefetch of the remaining input chunks
and, when weights come from L1, the weight blocks on the same 256-bit port.
With MRAM-sourced weights the next job's first prefetch runs while the
current job executes and normalizes, so it is hidden.
"""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, fields

from .qnn import CHUNK_1X1, CHUNK_3X3, OUT_GROUP, LayerSpec, Mode

PREFETCH_PER_CHUNK = 64  # 8*8*32 bytes at 32 B/cycle
PORT_BYTES = 32


class GeometryViolation(ValueError):
    pass


class WeightSource(str, enum.Enum):
    MRAM = "mram"
    L1 = "l1"


@dataclass(frozen=True)
class OperatingPoint:
    name: str
    voltage: float
    cluster_freq: float
    cluster_power_peak: float
    mram_freq: float
    mram_power: float

    def __post_init__(self):
        if not math.isclose(self.mram_freq, self.cluster_freq / 2, rel_tol=1e-9):
            raise ValueError("MRAM runs at half the cluster clock")

    @property
    def core_power(self) -> float:
        return self.cluster_power_peak - self.mram_power


NOMINAL = OperatingPoint("nominal", 0.80, 360e6, 0.332, 180e6, 0.069)
LOW_POWER = OperatingPoint("low_power", 0.65, 210e6, 0.151, 105e6, 0.040)
OPERATING_POINTS = {op.name: op for op in (NOMINAL, LOW_POWER)}


@dataclass(frozen=True)
class JobParams:
    """Per-job overhead split; only ``overhead_k`` is pinned by measurements."""

    overhead_k: int = 390
    first_prefetch: int = PREFETCH_PER_CHUNK
    nq_cycles_per_channel: float = 8.0
    zero_launch: bool = False

    @property
    def launch(self) -> float:
        if self.zero_launch:
            return 0.0
        ref_streamout = 6 * 6 * OUT_GROUP // PORT_BYTES
        return self.overhead_k - self.first_prefetch - self.nq_cycles_per_channel * OUT_GROUP - ref_streamout


@dataclass
class CycleBreakdown:
    launch: float = 0.0
    prefetch: float = 0.0
    execute: float = 0.0
    act_traffic: float = 0.0
    weight_traffic: float = 0.0
    normquant: float = 0.0
    streamout: float = 0.0
    total: float = 0.0
    jobs: int = 0
    weight_blocks: int = 0
    l1_bytes: float = 0.0

    def __iadd__(self, other: "CycleBreakdown"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def scaled(self, n: int) -> "CycleBreakdown":
        return CycleBreakdown(**{f.name: getattr(self, f.name) * n for f in fields(self)})


@dataclass(frozen=True)
class JobShape:
    out_h: int
    out_w: int
    c_in: int
    c_out: int


def _footprint(n_out: int, stride: int) -> int:
    return (n_out - 1) * stride + 1


def _job_terms(spec: LayerSpec, shape: JobShape, src: WeightSource, params: JobParams):
    mode = spec.mode
    s = spec.stride
    fh, fw = _footprint(shape.out_h, s), _footprint(shape.out_w, s)
    if min(shape.out_h, shape.out_w, shape.c_in, shape.c_out) <= 0:
        raise GeometryViolation("empty job")
    if fh > mode.job or fw > mode.job:
        raise GeometryViolation(f"job footprint {fh}x{fw} exceeds {mode.job}x{mode.job}")
    if mode is Mode.DEPTHWISE3X3:
        if shape.c_in != shape.c_out or shape.c_out > CHUNK_3X3:
            raise GeometryViolation("depthwise jobs hold one 28-channel chunk")
        n_chunks = 1
        execute = spec.qw
        blocks = spec.qw
    elif mode is Mode.DENSE3X3:
        if shape.c_out > OUT_GROUP:
            raise GeometryViolation("at most 32 resident output channels")
        n_chunks = -(-shape.c_in // CHUNK_3X3)
        execute = n_chunks * OUT_GROUP * spec.qw
        blocks = n_chunks * shape.c_out * spec.qw
    else:
        if shape.c_out > OUT_GROUP:
            raise GeometryViolation("at most 32 resident output channels")
        n_chunks = -(-shape.c_in // CHUNK_1X1)
        execute = n_chunks * shape.c_out
        blocks = n_chunks * shape.c_out
    act = (n_chunks - 1) * PREFETCH_PER_CHUNK
    wtraffic = blocks if src is WeightSource.L1 else 0
    out_bytes = shape.out_h * shape.out_w * shape.c_out * (4 if spec.raw_output else 1)
    streamout = -(-out_bytes // PORT_BYTES)
    normquant = params.nq_cycles_per_channel * shape.c_out
    k = spec.kernel
    in_bytes = (fh + k - 1) * (fw + k - 1) * shape.c_in
    l1_bytes = in_bytes + out_bytes + (blocks * PORT_BYTES if src is WeightSource.L1 else 0)
    body = max(execute, act + wtraffic)
    return execute, act, wtraffic, normquant, streamout, body, blocks, l1_bytes


def job_cycles(spec: LayerSpec, shape: JobShape, src: WeightSource | str = WeightSource.MRAM,
               params: JobParams = JobParams()) -> CycleBreakdown:
    """Cycles of a single-job task."""
    src = WeightSource(src)
    execute, act, wt, nq, so, body, blocks, l1b = _job_terms(spec, shape, src, params)
    launch = params.launch
    total = launch + params.first_prefetch + body + nq + so
    return CycleBreakdown(launch, params.first_prefetch, execute, act, wt, nq, so, total, 1, blocks, l1b)


def job_grid(spec: LayerSpec, out_h: int, out_w: int, c_out: int | None = None) -> Counter:
    """Count the distinct job shapes of a task producing ``out_h x out_w x c_out``.

    Jobs tile the stride-1 output grid; each job stores only the strided
    outputs that fall inside it.
    """
    c_out = spec.c_out if c_out is None else c_out
    s = spec.stride
    full_h, full_w = _footprint(out_h, s), _footprint(out_w, s)
    job = spec.mode.job

    def spans(full):
        out = []
        for a in range(0, full, job):
            b = min(a + job, full)
            n = len(range(-(-a // s) * s, b, s))
            if n:
                out.append(n)
        return out

    group = CHUNK_3X3 if spec.mode is Mode.DEPTHWISE3X3 else OUT_GROUP
    groups = [min(group, c_out - g) for g in range(0, c_out, group)]
    grid = Counter()
    for hy in spans(full_h):
        for wx in spans(full_w):
            for g in groups:
                c_in = g if spec.mode is Mode.DEPTHWISE3X3 else spec.c_in
                grid[JobShape(hy, wx, c_in, g)] += 1
    return grid


def task_cycles(spec: LayerSpec, out_h: int, out_w: int, c_out: int | None = None,
                src: WeightSource | str = WeightSource.MRAM,
                params: JobParams = JobParams()) -> CycleBreakdown:
    """Cycles of one offloaded task covering a ``out_h x out_w x c_out`` output tile."""
    src = WeightSource(src)
    total = CycleBreakdown(launch=params.launch, total=params.launch)
    first = True
    for shape, count in sorted(job_grid(spec, out_h, out_w, c_out).items(),
                               key=lambda kv: (kv[0].out_h, kv[0].out_w, kv[0].c_out)):
        execute, act, wt, nq, so, body, blocks, l1b = _job_terms(spec, shape, src, params)
        exposed = params.first_prefetch
        if src is WeightSource.MRAM:
            free_port = body - act + nq
            exposed = max(0.0, params.first_prefetch - free_port)
        n_exposed_full = 1 if first else 0
        prefetch = n_exposed_full * params.first_prefetch + (count - n_exposed_full) * exposed
        one = CycleBreakdown(0.0, 0.0, execute, act, wt, nq, so, body + nq + so, 1, blocks, l1b)
        part = one.scaled(count)
        part.prefetch = prefetch
        part.total += prefetch
        total += part
        first = False
    return total


def layer_cycles(spec: LayerSpec, in_h: int, in_w: int, src: WeightSource | str = WeightSource.MRAM,
                 params: JobParams = JobParams()) -> CycleBreakdown:
    """Cycles for a whole layer executed as a single task."""
    out_h, out_w = spec.out_dims(in_h, in_w)
    return task_cycles(spec, out_h, out_w, spec.c_out, src, params)


def kernel_throughput(spec: LayerSpec, in_h: int, in_w: int, src, op: OperatingPoint,
                      params: JobParams = JobParams()) -> float:
    """Ops per second (1 MAC = 2 Ops)."""
    cyc = layer_cycles(spec, in_h, in_w, src, params).total
    return 2 * spec.macs(in_h, in_w) / (cyc / op.cluster_freq)
