"""Randomized oracle-equivalence and property checks shared by the CLI and tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationSet
from .memory import ArbiterConfig, exhaustive_arbiter_check, l1_aggregate_bandwidth, mram_bandwidth
from .qnn import QW_MAX, LayerSpec, Mode, QTensor, RequantParams, conv_neureka, pack_weights, reference_layer
from .scenarios import SCENARIOS
from .scheduler import Unschedulable, analytic_latency, event_latency, plan_tiles, step_costs


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail}"


def random_layer_case(rng: np.random.Generator, qws=(2, 3, 4, 8)):
    """Small random layer exercising channel chunk and job-boundary remainders."""
    mode = Mode(list(Mode)[rng.integers(0, 3)])
    qw = int(rng.choice(qws))
    stride = int(rng.integers(1, 3))
    c_in = int(rng.integers(1, 70))
    c_out = c_in if mode is Mode.DEPTHWISE3X3 else int(rng.integers(1, 40))
    h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
    if rng.random() < 0.25:
        spec = LayerSpec(mode, c_in, c_out, qw, stride, raw_output=True)
    else:
        rq = RequantParams(rng.integers(1, 256, c_out), rng.integers(-(1 << 20), 1 << 20, c_out),
                           rng.integers(0, 24, c_out))
        spec = LayerSpec(mode, c_in, c_out, qw, stride, requant=rq)
    lo, hi = -(1 << (qw - 1)), 1 << (qw - 1)
    raw = rng.integers(lo, hi, size=spec.weight_shape)
    x = QTensor(rng.integers(0, 256, (h, w, c_in)).astype(np.uint8))
    return x, raw, spec


def _same(a, b) -> bool:
    a = a.data if isinstance(a, QTensor) else a
    b = b.data if isinstance(b, QTensor) else b
    return a.shape == b.shape and np.array_equal(a, b)


def check_bit_exact(cases: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(cases):
        x, raw, spec = random_layer_case(rng)
        if not _same(conv_neureka(x, pack_weights(raw, spec), spec), reference_layer(x, raw, spec)):
            bad += 1
    return CheckResult("bit-exact accelerator model", bad == 0, f"{cases - bad}/{cases} cases identical")


def random_schedule_costs(rng: np.random.Generator, cal: CalibrationSet = CalibrationSet()):
    """Step costs of a randomly shaped layer under a random scenario, or None if unschedulable."""
    mode = Mode(list(Mode)[rng.integers(0, 3)])
    c_in = int(rng.integers(3, 400))
    c_out = c_in if mode is Mode.DEPTHWISE3X3 else int(rng.integers(8, 400))
    spec = LayerSpec(mode, c_in, c_out, int(rng.choice([2, 4, 8])), int(rng.integers(1, 3)))
    h = int(rng.integers(4, 120))
    sc = list(SCENARIOS.values())[rng.integers(0, 4)]
    try:
        ts = plan_tiles(spec, (h, h), sc, cal)
    except Unschedulable:
        return None
    return step_costs(ts, sc, cal.operating_point("nominal"), cal)


def check_event_equivalence(schedules: int = 200, seed: int = 1, cal: CalibrationSet = CalibrationSet()) -> CheckResult:
    rng = np.random.default_rng(seed)
    done = bad = 0
    while done < schedules:
        costs = random_schedule_costs(rng, cal)
        if costs is None:
            continue
        done += 1
        latency, fill = analytic_latency(costs)
        if abs(latency - event_latency(costs)) > fill + 1e-6:
            bad += 1
    return CheckResult("analytic vs event latency", bad == 0,
                       f"{schedules - bad}/{schedules} schedules within one pipeline fill")


def random_page_accesses(rng: np.random.Generator):
    n_pages = int(rng.integers(1, 6))
    length = int(rng.integers(1, 24))
    pages = rng.integers(0, n_pages, length).tolist()
    durs = rng.uniform(0, 3e6, length).tolist()
    return n_pages, list(zip(pages, durs)), float(rng.uniform(1e4, 3e6))


def check_paging(schedules: int = 10_000, seed: int = 2) -> CheckResult:
    from .paging import check_trace, initial_layout, replay
    rng = np.random.default_rng(seed)
    unsafe = worse = 0
    for _ in range(schedules):
        n_pages, acc, swap = random_page_accesses(rng)
        init = initial_layout(n_pages)
        pro = replay(acc, init, swap, proactive=True)
        rea = replay(acc, init, swap, proactive=False)
        unsafe += not (check_trace(pro.trace, init) and check_trace(rea.trace, init))
        worse += pro.stall > rea.stall + 1e-6
    return CheckResult("paging safety and proactive <= reactive", unsafe == 0 and worse == 0,
                       f"{schedules} schedules, {unsafe} unsafe, {worse} proactive regressions")


def check_bandwidths(cal: CalibrationSet = CalibrationSet()) -> CheckResult:
    f = cal["nominal.cluster_freq"]
    opp = cal.operating_point("nominal")
    got = {"mram_port": mram_bandwidth(f), "l1_aggregate": l1_aggregate_bandwidth(f),
           "cluster_dma": cal.links()["cluster_dma"].bandwidth(opp)}
    want = {"mram_port": 92.16e9, "l1_aggregate": 184.32e9, "cluster_dma": 23.04e9}
    ok = all(abs(got[k] - want[k]) <= 0.005 * want[k] for k in want)
    return CheckResult("bandwidth identities", ok, ", ".join(f"{k} {got[k] / 1e9:.2f} Gbit/s" for k in got))


def check_arbiter(length: int = 8) -> CheckResult:
    s = exhaustive_arbiter_check(ArbiterConfig(), length=length)
    return CheckResult("arbiter share and starvation freedom", s.ok,
                       f"{s.instances} patterns, max wait {s.max_wait} (bound {s.wait_bound})")


def run_validation(quick: bool = False) -> list[CheckResult]:
    scale = 10 if quick else 1
    return [
        check_bit_exact(1000 // scale),
        check_event_equivalence(200 // scale),
        check_paging(10_000 // scale),
        check_bandwidths(),
        check_arbiter(5 if quick else 8),
    ]


__all__ = ["CheckResult", "run_validation", "check_bit_exact", "check_event_equivalence", "check_paging",
           "check_bandwidths", "check_arbiter", "random_layer_case", "random_schedule_costs",
           "random_page_accesses", "QW_MAX"]
