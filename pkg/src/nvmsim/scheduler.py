"""Per-layer tiling, double-buffered step timelines and regime labels.

A layer is cut into output tiles (spatial tiles outer, output-channel tiles
inner). Each *step* moves its input tile (once per spatial tile), its
weights and its output over the cluster DMA while the accelerator works on
the previous step. Weights are staged into L2 once per layer.
"""
from __future__ import annotations

import csv
import enum
import heapq
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .calibration import CalibrationSet
from .qnn import CHUNK_3X3, OUT_GROUP, LayerSpec, Mode
from .scenarios import ScenarioConfig
from .timing import CycleBreakdown, JobParams, OperatingPoint, WeightSource, task_cycles
from .xfer import transfer_cycles

REGIME_MARGIN = 1.2


class Unschedulable(RuntimeError):
    def __init__(self, message: str, layer: str | None = None):
        self.layer = layer
        super().__init__(f"{layer}: {message}" if layer else message)


class Regime(str, enum.Enum):
    WELL_BALANCED = "WellBalanced"
    COMPUTE_DOMINATED = "ComputeDominated"
    WEIGHT_MEMORY_BOUND = "WeightMemoryBound"


@dataclass(frozen=True)
class Step:
    row: tuple[int, int]  # output rows [r0, r1)
    col: tuple[int, int]
    chan: tuple[int, int]  # output channels [c0, c1)
    in_bytes: int
    w_bytes: int  # weights into L1
    out_bytes: int
    stage_bytes: int  # weights staged into L2 ahead of this step
    compute: CycleBreakdown


@dataclass
class TileSchedule:
    layer: str
    spec: LayerSpec
    in_dims: tuple[int, int]
    tile: tuple[int, int, int, int]  # (h, w, c_in_tile, c_out_tile) of the output tile
    counts: tuple[int, int, int]  # tiles along (h, w, c_out)
    steps: list[Step]
    weights_in_l1: bool

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def volume(self, attr: str) -> int:
        return sum(getattr(s, attr) for s in self.steps)

    @property
    def compute(self) -> CycleBreakdown:
        total = CycleBreakdown()
        for s in self.steps:
            total += s.compute
        return total

    def buffer_bytes(self) -> int:
        """Largest double-buffered L1 footprint of any step."""
        spec = self.spec
        worst = 0
        for st in self.steps:
            n_co = st.chan[1] - st.chan[0]
            c_in = n_co if spec.mode is Mode.DEPTHWISE3X3 else spec.c_in
            inp = _in_span(st.row, spec, self.in_dims[0]) * _in_span(st.col, spec, self.in_dims[1]) * c_in
            w = _weight_bytes(spec, n_co) if self.weights_in_l1 else 0
            worst = max(worst, 2 * (inp + w + st.out_bytes))
        return worst


def _in_span(span: tuple[int, int], spec: LayerSpec, limit: int) -> int:
    """Input rows needed for output rows ``[a, b)``, clipped to the image (padding is not moved)."""
    a, b = span
    lo = a * spec.stride - spec.padding
    hi = (b - 1) * spec.stride - spec.padding + spec.kernel
    return max(0, min(hi, limit) - max(lo, 0))


def _max_span(t: int, spec: LayerSpec, limit: int) -> int:
    """Widest input span of any ``t``-wide output tile (interior tiles see the full halo)."""
    return min(limit, (t - 1) * spec.stride + spec.kernel)


def _weight_bytes(spec: LayerSpec, c_out: int) -> int:
    per = spec.kernel ** 2 * (1 if spec.mode is Mode.DEPTHWISE3X3 else spec.c_in)
    return -(-per * c_out * spec.qw // 8)


def _cuts(total: int, size: int) -> list[tuple[int, int]]:
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def _spatial_candidates(out: int, step: int) -> list[int]:
    return sorted({*range(step, out + 1, step), out})


def _channel_candidates(spec: LayerSpec) -> list[int]:
    unit = CHUNK_3X3 if spec.mode is Mode.DEPTHWISE3X3 else OUT_GROUP
    return sorted({*range(unit, spec.c_out + 1, unit), spec.c_out})


@lru_cache(maxsize=4096)
def _choose_tile(spec: LayerSpec, in_h: int, in_w: int, weights_in_l1: bool, capacity: int):
    out_h, out_w = spec.out_dims(in_h, in_w)
    step = max(1, spec.mode.job // spec.stride)
    out_bytes_per = 4 if spec.raw_output else 1
    best, best_key = None, None
    for co in _channel_candidates(spec):
        c_in = co if spec.mode is Mode.DEPTHWISE3X3 else spec.c_in
        w = _weight_bytes(spec, co) if weights_in_l1 else 0
        for th in _spatial_candidates(out_h, step):
            rows = _max_span(th, spec, in_h)
            for tw in _spatial_candidates(out_w, step):
                cols = _max_span(tw, spec, in_w)
                need = 2 * (rows * cols * c_in + th * tw * co * out_bytes_per + w)
                if need > capacity:
                    continue
                # spatial extent counted as the area each step really covers
                n_spatial = -(-out_h // th) * -(-out_w // tw)
                key = (c_in, -n_spatial, th * tw, co, th, tw)
                if best_key is None or key > best_key:
                    best, best_key = (th, tw, c_in, co), key
    return best


@lru_cache(maxsize=65536)
def _task(spec: LayerSpec, th: int, tw: int, co: int, src: WeightSource, params: JobParams) -> CycleBreakdown:
    return task_cycles(spec, th, tw, co, src, params)


def _hashable_spec(spec: LayerSpec) -> LayerSpec:
    # requant arrays do not affect timing
    if spec.requant is None:
        return spec
    return LayerSpec(spec.mode, spec.c_in, spec.c_out, spec.qw, spec.stride, spec.padding, None, spec.raw_output)


def plan_tiles(spec: LayerSpec, dims: tuple[int, int], scenario: ScenarioConfig,
               cal: CalibrationSet = CalibrationSet(), layer: str = "layer") -> TileSchedule:
    """Largest full-depth tile that double-buffers into L1.

    Preference order: input-channel depth, fewest spatial tiles (so a
    ragged remainder does not win on nominal area), output tile area,
    output channels, then taller before wider.
    """
    spec = _hashable_spec(spec)
    in_h, in_w = dims
    out_h, out_w = spec.out_dims(in_h, in_w)
    in_l1 = scenario.weights_in_l1
    choice = _choose_tile(spec, in_h, in_w, in_l1, scenario.l1_capacity)
    if choice is None:
        raise Unschedulable("no tile fits the double-buffered L1", layer)
    th, tw, c_in_t, co_t = choice
    params = cal.job_params()
    src = scenario.weight_source
    rows, cols, chans = _cuts(out_h, th), _cuts(out_w, tw), _cuts(spec.c_out, co_t)
    dw = spec.mode is Mode.DEPTHWISE3X3
    single_c = len(chans) == 1
    staged = bool(scenario.staging_links)
    out_per = 4 if spec.raw_output else 1
    steps = []
    for r in rows:
        ih = _in_span(r, spec, in_h)
        for c in cols:
            iw = _in_span(c, spec, in_w)
            for j, ch in enumerate(chans):
                n_co = ch[1] - ch[0]
                if dw:
                    in_b = ih * iw * n_co
                else:
                    in_b = ih * iw * spec.c_in if j == 0 else 0
                first_spatial = (r[0], c[0]) == (0, 0)
                w_b = 0
                if in_l1 and (first_spatial or not single_c):
                    w_b = _weight_bytes(spec, n_co)
                stage_b = _weight_bytes(spec, n_co) if staged and first_spatial else 0
                comp = _task(spec, r[1] - r[0], c[1] - c[0], n_co, src, params)
                steps.append(Step(r, c, ch, in_b, w_b, (r[1] - r[0]) * (c[1] - c[0]) * n_co * out_per,
                                  stage_b, comp))
    return TileSchedule(layer, spec, (in_h, in_w), (th, tw, c_in_t, co_t), (len(rows), len(cols), len(chans)),
                        steps, in_l1)


# --------------------------------------------------------------------------
# timelines

@dataclass
class StepCost:
    compute: float
    dma_in: float  # input + weights over the activation link
    dma_out: float
    stage: dict  # staging link -> cycles


@dataclass
class LayerReport:
    layer: str
    mode: str
    latency_cycles: float
    latency_s: float
    energy: dict  # component -> J
    regime: Regime
    cycles: CycleBreakdown
    link_bytes: dict  # link -> bytes
    link_cycles: dict  # link -> busy cycles
    compute_cycles: float
    fill_cycles: float
    weight_link_cycles: float

    @property
    def energy_total(self) -> float:
        return sum(self.energy.values())


ENERGY_PARTS = ("compute", "idle", "l1", "l2l1", "l3l2", "offchip", "mram_read")


def step_costs(ts: TileSchedule, scenario: ScenarioConfig, opp: OperatingPoint,
               cal: CalibrationSet = CalibrationSet()) -> list[StepCost]:
    links = cal.links()
    act = links[scenario.act_link]
    staging = [links[n] for n in scenario.staging_links]
    costs = []
    for s in ts.steps:
        stage = {lk.name: transfer_cycles(lk, s.stage_bytes, opp) for lk in staging}
        dma_in = transfer_cycles(act, s.in_bytes, opp) + transfer_cycles(act, s.w_bytes, opp)
        costs.append(StepCost(s.compute.total, dma_in, transfer_cycles(act, s.out_bytes, opp), stage))
    return costs


def analytic_latency(costs: Sequence[StepCost]) -> tuple[float, float]:
    """(latency, fill) of the slot-synchronous double-buffered pipeline.

    Step ``i`` stages in slot ``i``, loads in ``i+1``, computes in ``i+2``
    and stores in ``i+3``; each slot lasts as long as its slowest resource.
    Two buffers per stream suffice for this schedule. ``fill`` is the
    exposed head and tail: first staging and load, last store.
    """
    n = len(costs)
    if n == 0:
        return 0.0, 0.0

    def at(t, f):
        return f(costs[t]) if 0 <= t < n else 0.0

    stage = lambda c: max(c.stage.values(), default=0.0)
    total = 0.0
    for t in range(n + 3):
        total += max(at(t, stage), at(t - 1, lambda c: c.dma_in) + at(t - 3, lambda c: c.dma_out),
                     at(t - 2, lambda c: c.compute))
    fill = stage(costs[0]) + costs[0].dma_in + costs[-1].dma_out
    return total, fill


def event_latency(costs: Sequence[StepCost]) -> float:
    """Discrete-event replay of the double-buffered pipeline.

    Per step: staging transfers (one engine per staging link), an inbound
    DMA, the compute and an outbound DMA. Inbound and outbound share the
    activation DMA, earliest-ready first with outbound winning ties. L2 and
    L1 hold two buffers per stream, so staging ``i`` waits for inbound
    ``i-2``, inbound ``i`` for compute ``i-2`` and compute ``i`` for
    outbound ``i-2``.
    """
    n = len(costs)
    if n == 0:
        return 0.0
    links = sorted({k for c in costs for k in c.stage})
    tasks = []  # (resource, duration, priority, step)
    deps: list[list[int]] = []
    ids = {}

    def add(key, resource, dur, prio, step, after):
        ids[key] = len(tasks)
        tasks.append((resource, dur, prio, step))
        deps.append([ids[a] for a in after if a in ids])

    for i, c in enumerate(costs):
        for k in links:
            add(("S", k, i), k, c.stage.get(k, 0.0), 1, i, [("S", k, i - 1), ("I", i - 2)])
        add(("I", i), "dma", c.dma_in, 1, i, [("S", k, i) for k in links] + [("I", i - 1), ("C", i - 2)])
        add(("C", i), "acc", c.compute, 1, i, [("I", i), ("C", i - 1), ("O", i - 2)])
        add(("O", i), "dma", c.dma_out, 0, i, [("C", i)])

    waiting = [len(d) for d in deps]
    children: list[list[int]] = [[] for _ in tasks]
    for t, d in enumerate(deps):
        for p in d:
            children[p].append(t)
    queues: dict = {}
    busy: dict = {}
    events: list = []
    finish = [0.0] * len(tasks)

    def enqueue(t, now):
        res, _, prio, step = tasks[t]
        heapq.heappush(queues.setdefault(res, []), (now, prio, step, t))

    def dispatch(now):
        for res, q in queues.items():
            if q and not busy.get(res):
                _, _, _, t = heapq.heappop(q)
                busy[res] = True
                heapq.heappush(events, (now + tasks[t][1], t))

    for t in range(len(tasks)):
        if waiting[t] == 0:
            enqueue(t, 0.0)
    dispatch(0.0)
    while events:
        now = events[0][0]
        while events and events[0][0] == now:
            _, t = heapq.heappop(events)
            finish[t] = now
            busy[tasks[t][0]] = False
            for ch in children[t]:
                waiting[ch] -= 1
                if waiting[ch] == 0:
                    enqueue(ch, now)
        dispatch(now)
    return max(finish)


def link_busy(costs: Sequence[StepCost], act_link: str) -> dict:
    busy = {act_link: sum(c.dma_in + c.dma_out for c in costs)}
    for c in costs:
        for k, v in c.stage.items():
            busy[k] = busy.get(k, 0.0) + v
    return busy


def classify_regime(report: "LayerReport", margin: float = REGIME_MARGIN) -> Regime:
    comp = report.compute_cycles
    if report.weight_link_cycles > margin * comp:
        return Regime.WEIGHT_MEMORY_BOUND
    if all(comp > margin * v for v in report.link_cycles.values()):
        return Regime.COMPUTE_DOMINATED
    return Regime.WELL_BALANCED


def layer_timeline(ts: TileSchedule, scenario: ScenarioConfig, opp: OperatingPoint,
                   cal: CalibrationSet = CalibrationSet()) -> LayerReport:
    links = cal.links()
    costs = step_costs(ts, scenario, opp, cal)
    latency, fill = analytic_latency(costs)
    comp = ts.compute
    f = opp.cluster_freq
    act = links[scenario.act_link]
    dma_bytes = ts.volume("in_bytes") + ts.volume("w_bytes") + ts.volume("out_bytes")
    stage_bytes = ts.volume("stage_bytes")
    link_bytes = {scenario.act_link: dma_bytes}
    for n in scenario.staging_links:
        link_bytes[n] = stage_bytes
    port = scenario.weight_path[-1]
    link_bytes[port] = comp.weight_blocks * 32

    def per_bit(lk):
        return cal.mram_energy(opp) if lk.category == "mram_read" else lk.energy_per_bit

    energy = dict.fromkeys(ENERGY_PARTS, 0.0)
    energy["compute"] = comp.total / f * cal.active_power(ts.spec.mode, ts.spec.qw, opp)
    energy["idle"] = cal["idle_fraction"] * opp.cluster_power_peak * max(0.0, latency - comp.total) / f
    act_l1 = comp.l1_bytes - (comp.weight_blocks * 32 if scenario.weights_in_l1 else 0)
    energy["l1"] = act_l1 * 8 * cal["e_l1"]
    for name, nbytes in link_bytes.items():
        lk = links[name]
        energy[lk.category] += nbytes * 8 * per_bit(lk)
    if scenario.store_read:
        lk = links[scenario.store_read]
        first_hop = stage_bytes if scenario.staging_links else ts.volume("w_bytes")
        energy[lk.category] += first_hop * 8 * per_bit(lk)

    busy = link_busy(costs, scenario.act_link)
    weight_busy = max([busy.get(n, 0.0) for n in scenario.staging_links] +
                      [sum(transfer_cycles(act, s.w_bytes, opp) for s in ts.steps)])
    report = LayerReport(ts.layer, ts.spec.mode.value, latency, latency / f, energy, Regime.WELL_BALANCED,
                         comp, link_bytes, busy, comp.total, fill, weight_busy)
    report.regime = classify_regime(report)
    return report


def merge_reports(reports: Sequence[LayerReport], name: str) -> LayerReport:
    """Aggregate several layers (e.g. a bottleneck stage) into one report."""
    comp = CycleBreakdown()
    energy = dict.fromkeys(ENERGY_PARTS, 0.0)
    link_bytes: dict = {}
    busy: dict = {}
    for r in reports:
        comp += r.cycles
        for k, v in r.energy.items():
            energy[k] = energy.get(k, 0.0) + v
        for k, v in r.link_bytes.items():
            link_bytes[k] = link_bytes.get(k, 0) + v
        for k, v in r.link_cycles.items():
            busy[k] = busy.get(k, 0.0) + v
    out = LayerReport(name, "+".join(sorted({r.mode for r in reports})),
                      sum(r.latency_cycles for r in reports), sum(r.latency_s for r in reports), energy,
                      Regime.WELL_BALANCED, comp, link_bytes, busy, sum(r.compute_cycles for r in reports),
                      sum(r.fill_cycles for r in reports), sum(r.weight_link_cycles for r in reports))
    out.regime = classify_regime(out)
    return out


SCHEDULE_COLUMNS = ("layer", "tile_h", "tile_w", "c_in_tile", "c_out_tile", "n_h", "n_w", "n_c", "steps",
                    "in_bytes", "w_bytes", "out_bytes", "stage_bytes", "compute_cycles")


def schedule_rows(schedules: Sequence[TileSchedule]) -> list[dict]:
    rows = []
    for ts in schedules:
        rows.append(dict(zip(SCHEDULE_COLUMNS, (
            ts.layer, *ts.tile, *ts.counts, ts.n_steps, ts.volume("in_bytes"), ts.volume("w_bytes"),
            ts.volume("out_bytes"), ts.volume("stage_bytes"), ts.compute.total))))
    return rows


def dump_schedule(schedules: Sequence[TileSchedule], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SCHEDULE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(schedule_rows(schedules))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
