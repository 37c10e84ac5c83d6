"""End-to-end network runs, scenario comparison, calibration fitting and reports."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from scipy.optimize import minimize_scalar

from .calibration import CalibrationSet, ParseError
from .network import NetworkDesc, stage_of
from .scenarios import SCENARIO_ORDER, SCENARIOS, ScenarioConfig
from .scheduler import (ENERGY_PARTS, LayerReport, Regime, Unschedulable, layer_timeline, merge_reports,
                        plan_tiles)
from .timing import CycleBreakdown, OperatingPoint

FRAME_RATE = 30.0
REPORT_LINKS = ("hyperbus", "l3mram", "cluster_dma", "mram_port", "l1_port")


@dataclass
class InferenceReport:
    network: str
    scenario: str
    opp: str
    layers: list[LayerReport] = field(default_factory=list)
    frame_idle_power: float = 0.0
    paging_stall_s: float = 0.0

    @property
    def latency_s(self) -> float:
        return sum(l.latency_s for l in self.layers) + self.paging_stall_s

    @property
    def energy_j(self) -> float:
        return sum(l.energy_total for l in self.layers)

    def energy_by_part(self) -> dict:
        out = dict.fromkeys(ENERGY_PARTS, 0.0)
        for l in self.layers:
            for k, v in l.energy.items():
                out[k] += v
        return out

    @property
    def fps(self) -> float:
        return math.inf if self.latency_s == 0 else 1.0 / self.latency_s

    @property
    def mj_per_inference(self) -> float:
        return self.energy_j * 1e3

    def average_power(self, frame_rate: float = FRAME_RATE) -> float:
        """Inference energy per second plus idle power for the rest of each frame."""
        busy = min(1.0, self.latency_s * frame_rate)
        return self.energy_j * frame_rate + self.frame_idle_power * (1.0 - busy)

    def layer(self, name: str) -> LayerReport:
        for l in self.layers:
            if l.layer == name:
                return l
        raise KeyError(name)

    def stages(self) -> dict[int, LayerReport]:
        """Per bottleneck stage aggregates, keyed by stage index."""
        groups: dict[int, list] = {}
        for l in self.layers:
            st = stage_of(l.layer)
            if st is not None:
                groups.setdefault(st, []).append(l)
        return {k: merge_reports(v, f"bn{k}") for k, v in sorted(groups.items())}


def run_network(net: NetworkDesc, sc: ScenarioConfig, opp: OperatingPoint,
                cal: CalibrationSet = CalibrationSet()) -> InferenceReport:
    report = InferenceReport(net.name, sc.name, opp.name, frame_idle_power=cal["frame_idle_power"])
    if net.weight_bytes > sc.weight_store.capacity and not sc.paging:
        raise Unschedulable(f"{net.weight_bytes} B of weights exceed {sc.weight_store.name.value} "
                            f"({sc.weight_store.capacity} B) without paging", net.name)
    for l in net.layers:
        ts = plan_tiles(l.spec, (l.h, l.w), sc, cal, l.name)
        report.layers.append(layer_timeline(ts, sc, opp, cal))
    if sc.paging and net.weight_bytes > sc.weight_store.capacity:
        from .paging import network_paging_stall
        report.paging_stall_s = network_paging_stall(net, report, cal, opp)
    return report


@dataclass(frozen=True)
class Comparison:
    latency_s: dict
    energy_j: dict
    baseline: str

    def latency_gain(self, name: str, over: str | None = None) -> float:
        return self.latency_s[over or self.baseline] / self.latency_s[name]

    def energy_gain(self, name: str, over: str | None = None) -> float:
        return self.energy_j[over or self.baseline] / self.energy_j[name]

    def table(self) -> list[tuple[str, float, float, float, float]]:
        return [(n, self.latency_s[n], self.energy_j[n], self.latency_gain(n), self.energy_gain(n))
                for n in self.latency_s]


def compare_scenarios(net: NetworkDesc, opp: OperatingPoint, cal: CalibrationSet = CalibrationSet(),
                      scenarios: Sequence[str] = SCENARIO_ORDER, baseline: str = "L3Flash",
                      reports: dict | None = None) -> Comparison:
    lat, en = {}, {}
    for name in scenarios:
        r = run_network(net, SCENARIOS[name], opp, cal)
        if reports is not None:
            reports[name] = r
        lat[name], en[name] = r.latency_s, r.energy_j
    return Comparison(lat, en, baseline if baseline in lat else scenarios[0])


# --------------------------------------------------------------------------
# calibration fitting

class FitDiverged(RuntimeError):
    def __init__(self, message: str, errors: dict | None = None):
        self.errors = errors or {}
        super().__init__(message)


# target name -> value; latencies in s, energies in J, throughputs in Op/s, efficiencies in Op/J
DEFAULT_TARGETS = {
    "dense8_gops": 698e9,
    "dense2_gops": 1947e9,
    "dense2_lp_topj": 8.84e12,
    "pointwise_lp_topj": 2.4e12,
    "pointwise_l1_energy_gain": 1.5,
    "offchip_share": 0.55,
    "L3Flash.latency": 12.6e-3,
    "L3Flash.energy": 3.8e-3,
    "L1MRAM.latency": 7.3e-3,
    "L1MRAM.energy": 1.4e-3,
    "L3MRAM.latency": 12.6e-3 / 1.2,
    "L3MRAM.energy": 3.8e-3 / 2.0,
    "L2MRAM.latency": 7.3e-3 * 1.27,
    "L2MRAM.energy": 1.4e-3 * 1.37,
}

FIT_BOUNDS = {
    "nq_cycles_per_channel": (0.0, 9.0),
    "hyperbus_bw": (0.5e9, 20e9),
    "l3mram_bw": (0.5e9, 40e9),
    "e_l2l1": (0.05e-12, 20e-12),
    "e_l3mram": (0.1e-12, 80e-12),
    "idle_fraction": (0.0, 1.0),
    "pf_depthwise": (0.1, 1.0),
}
FIT_ORDER = ("nq_cycles_per_channel", "hyperbus_bw", "l3mram_bw", "idle_fraction", "e_l2l1", "e_l3mram",
             "pf_depthwise")
DIVERGENCE_LIMIT = 0.25


def load_targets(path) -> dict:
    """``name = value`` per line, ``#`` comments; names from DEFAULT_TARGETS."""
    targets = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key = key.strip()
        if not eq or key not in DEFAULT_TARGETS:
            raise ParseError(f"unknown target line {raw.strip()!r}", n, path)
        try:
            targets[key] = float(val.split()[0])
        except (ValueError, IndexError):
            raise ParseError(f"bad value in {raw.strip()!r}", n, path) from None
    return targets


def solve_overhead(gops8: float, gops2: float, freq: float, c_in: int = 252, c_out: int = 32) -> tuple[float, float]:
    """Per-task fixed cycles implied by each measured dense 3x3 throughput."""
    from .qnn import CHUNK_3X3, OUT_GROUP
    macs = 6 * 6 * 9 * c_in * c_out
    ks = []
    for gops, qw in ((gops8, 8), (gops2, 2)):
        execute = -(-c_in // CHUNK_3X3) * OUT_GROUP * qw
        ks.append(2 * macs * freq / gops - execute)
    return ks[0], ks[1]


def _kernel_factors(cal: CalibrationSet, targets: dict) -> dict:
    """Closed-form power factors from the low-power efficiency targets."""
    from .calibration import kernel_rate
    from .qnn import LayerSpec, Mode
    lp = cal.operating_point("low_power")
    out = {}
    for key, spec, name in (("dense2_lp_topj", LayerSpec(Mode.DENSE3X3, 252, 32, 2), "pf_dense_q2"),
                            ("pointwise_lp_topj", LayerSpec(Mode.POINTWISE1X1, 224, 32, 8), "pf_pointwise")):
        if key not in targets:
            continue
        probe = cal.updated(**{name: 1.0})
        thr, eff = kernel_rate(spec, 6, 6, "mram", lp, probe)
        # energy per op = pf * P_core / thr + mram part
        e_full = 1 / eff
        e_active = lp.core_power / thr
        e_mram = e_full - e_active
        out[name] = (1 / targets[key] - e_mram) / e_active
    if "pointwise_l1_energy_gain" in targets:
        # L1 weight-read energy making the L1-sourced kernel that much less efficient
        nom = cal.operating_point("nominal")
        spec = LayerSpec(Mode.POINTWISE1X1, 224, 32, 8)
        probe = cal.updated(**out, e_l1_weights=0.0)
        _, eff_m = kernel_rate(spec, 6, 6, "mram", nom, probe)
        thr_l, eff_l = kernel_rate(spec, 6, 6, "l1", nom, probe)
        from .timing import layer_cycles
        bits = layer_cycles(spec, 6, 6, "l1", probe.job_params()).weight_blocks * 256
        ops = 2 * spec.macs(6, 6)
        extra = targets["pointwise_l1_energy_gain"] / eff_m - 1 / eff_l  # J/op
        out["e_l1_weights"] = max(0.0, extra * ops / bits)
    return out


def scenario_metrics(net: NetworkDesc, cal: CalibrationSet, opp: OperatingPoint, names=SCENARIO_ORDER) -> dict:
    m = {}
    for name in names:
        r = run_network(net, SCENARIOS[name], opp, cal)
        m[f"{name}.latency"] = r.latency_s
        m[f"{name}.energy"] = r.energy_j
        if name == "L3Flash":
            m["offchip_share"] = r.energy_by_part()["offchip"] / r.energy_j
    return m


def relative_errors(metrics: dict, targets: dict) -> dict:
    return {k: abs(metrics[k] - v) / abs(v) for k, v in targets.items() if k in metrics}


@dataclass
class FitResult:
    cal: CalibrationSet
    errors: dict
    metrics: dict


def fit_calibration(net: NetworkDesc, targets: dict | None = None, cal: CalibrationSet = CalibrationSet(),
                    free: Sequence[str] = FIT_ORDER, sweeps: int = 3) -> FitResult:
    """Closed-form kernel constants, then coordinate descent on the network targets.

    Raises :class:`FitDiverged` when any target misses by more than 25%.
    """
    targets = dict(DEFAULT_TARGETS if targets is None else targets)
    opp = cal.operating_point("nominal")
    fit = {}
    if "dense8_gops" in targets and "dense2_gops" in targets:
        k8, k2 = solve_overhead(targets["dense8_gops"], targets["dense2_gops"], opp.cluster_freq)
        fit["overhead_k"] = round((k8 + k2) / 2)
    fit["e_mram"] = opp.mram_power / (cal["mram_port_bits"] * opp.cluster_freq)
    cal = cal.updated("derived-fit", **fit)
    cal = cal.updated("derived-fit", **_kernel_factors(cal, targets))
    if {"offchip_share", "L3Flash.energy"} <= targets.keys():
        e_off = targets["offchip_share"] * targets["L3Flash.energy"] / (net.weight_bytes * 8)
        cal = cal.updated("derived-fit", e_offchip=e_off)

    net_targets = {k: v for k, v in targets.items() if "." in k or k == "offchip_share"}

    def cost(c: CalibrationSet) -> float:
        err = relative_errors(scenario_metrics(net, c, opp), net_targets)
        return sum(e * e for e in err.values())

    for _ in range(sweeps if net_targets else 0):
        for name in free:
            lo, hi = FIT_BOUNDS[name]
            res = minimize_scalar(lambda v: cost(cal.updated(**{name: v})), bounds=(lo, hi), method="bounded",
                                  options={"xatol": (hi - lo) * 1e-4})
            cal = cal.updated("derived-fit", **{name: float(res.x)})
    metrics = scenario_metrics(net, cal, opp)
    errors = relative_errors(metrics, net_targets)
    from .calibration import kernel_rate
    from .qnn import LayerSpec, Mode
    for key, qw in (("dense8_gops", 8), ("dense2_gops", 2)):
        if key in targets:
            metrics[key] = kernel_rate(LayerSpec(Mode.DENSE3X3, 252, 32, qw), 6, 6, "mram", opp, cal)[0]
            errors[key] = abs(metrics[key] - targets[key]) / targets[key]
    bad = {k: e for k, e in errors.items() if e > DIVERGENCE_LIMIT}
    if bad:
        raise FitDiverged("fit misses " + ", ".join(f"{k} by {e:.0%}" for k, e in sorted(bad.items())), errors)
    return FitResult(cal, errors, metrics)


# --------------------------------------------------------------------------
# report CSV

CYCLE_FIELDS = ("launch", "prefetch", "execute", "act_traffic", "weight_traffic", "normquant", "streamout",
                "total", "jobs", "weight_blocks", "l1_bytes")
CYCLE_COLUMN = {"normquant": "cycles_nq"}


def report_columns() -> list[str]:
    cols = ["layer", "mode"]
    cols += [CYCLE_COLUMN.get(f, f"cycles_{f}") for f in CYCLE_FIELDS]
    cols += [f"bytes_{l}" for l in REPORT_LINKS]
    cols += [f"busy_{l}" for l in REPORT_LINKS]
    cols += ["latency_cycles", "latency_s", "compute_cycles", "fill_cycles", "weight_link_cycles"]
    cols += [f"energy_{p}_J" for p in ENERGY_PARTS]
    cols += ["regime"]
    return cols


def _num(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def emit_report(report: InferenceReport, path=None) -> str:
    buf = io.StringIO()
    buf.write(f"# network={report.network}\n# scenario={report.scenario}\n# opp={report.opp}\n")
    buf.write(f"# frame_idle_power={report.frame_idle_power!r}\n# paging_stall_s={report.paging_stall_s!r}\n")
    buf.write(f"# total_latency_s={report.latency_s!r}\n# total_energy_J={report.energy_j!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report_columns())
    for l in report.layers:
        row = [l.layer, l.mode]
        row += [_num(getattr(l.cycles, f)) for f in CYCLE_FIELDS]
        row += [_num(l.link_bytes[k]) if k in l.link_bytes else "" for k in REPORT_LINKS]
        row += [_num(l.link_cycles[k]) if k in l.link_cycles else "" for k in REPORT_LINKS]
        row += [_num(v) for v in (l.latency_cycles, l.latency_s, l.compute_cycles, l.fill_cycles,
                                  l.weight_link_cycles)]
        row += [_num(l.energy[p]) for p in ENERGY_PARTS]
        row += [l.regime.value]
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def _parse_num(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def parse_report(text: str, source=None) -> InferenceReport:
    meta = {}
    lines = text.splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
            body_start = i + 1
        else:
            break
    rows = list(csv.reader(lines[body_start:]))
    if not rows or rows[0] != report_columns():
        raise ParseError("report header does not match the expected columns", body_start + 1, source)
    try:
        rep = InferenceReport(meta["network"], meta["scenario"], meta["opp"],
                              frame_idle_power=float(meta["frame_idle_power"]),
                              paging_stall_s=float(meta["paging_stall_s"]))
    except KeyError as e:
        raise ParseError(f"missing metadata {e.args[0]!r}", 1, source) from None
    nc = len(CYCLE_FIELDS)
    nl = len(REPORT_LINKS)
    for n, row in enumerate(rows[1:], body_start + 2):
        if len(row) != len(rows[0]):
            raise ParseError("wrong number of fields", n, source)
        try:
            cyc = CycleBreakdown(**{f: _parse_num(v) for f, v in zip(CYCLE_FIELDS, row[2:2 + nc])})
            i = 2 + nc
            lb = {k: _parse_num(v) for k, v in zip(REPORT_LINKS, row[i:i + nl]) if v != ""}
            i += nl
            busy = {k: _parse_num(v) for k, v in zip(REPORT_LINKS, row[i:i + nl]) if v != ""}
            i += nl
            lat_c, lat_s, comp, fill, wl = (_parse_num(v) for v in row[i:i + 5])
            i += 5
            energy = {p: float(v) for p, v in zip(ENERGY_PARTS, row[i:i + len(ENERGY_PARTS)])}
            regime = Regime(row[-1])
        except (ValueError, TypeError) as e:
            raise ParseError(str(e), n, source) from None
        rep.layers.append(LayerReport(row[0], row[1], lat_c, lat_s, energy, regime, cyc, lb, busy, comp, fill, wl))
    return rep


def load_report(path) -> InferenceReport:
    return parse_report(Path(path).read_text(encoding="utf-8"), source=path)
