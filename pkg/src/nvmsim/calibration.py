"""Calibration constants with units and provenance, and the ``.cal`` text format.

Each line of a ``.cal`` file reads::

    key = value unit # provenance

where provenance is one of ``paper``, ``derived-fit`` or ``default``. Blank
lines and lines starting with ``#`` are ignored; unknown keys are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .qnn import Mode
from .timing import JobParams, OperatingPoint, WeightSource
from .xfer import Link, default_links, mram_energy_per_bit

PROVENANCES = ("paper", "derived-fit", "default")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        where += f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Param:
    value: float
    unit: str
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


# key: (value, unit, provenance, description)
SCHEMA: dict[str, tuple[float, str, str, str]] = {
    "nominal.voltage": (0.80, "V", "paper", "nominal core voltage"),
    "nominal.cluster_freq": (360e6, "Hz", "paper", "nominal cluster clock"),
    "nominal.cluster_power": (0.332, "W", "paper", "cluster power incl. MRAM at full load"),
    "nominal.mram_power": (0.069, "W", "paper", "weight MRAM power at full load"),
    "low_power.voltage": (0.65, "V", "paper", ""),
    "low_power.cluster_freq": (210e6, "Hz", "paper", ""),
    "low_power.cluster_power": (0.151, "W", "paper", ""),
    "low_power.mram_power": (0.040, "W", "paper", ""),
    "overhead_k": (390.0, "cycles", "derived-fit", "fixed cycles per single-job task"),
    "first_prefetch": (64.0, "cycles", "default", "exposed prefetch of the first input chunk"),
    "nq_cycles_per_channel": (8.0, "cycles", "default", "normalization/quantization per output channel"),
    "zero_launch": (0.0, "flag", "default", "1 removes the task launch cost"),
    "dma_setup": (50.0, "cycles", "default", "setup per DMA transfer"),
    "miss_service": (200.0, "cycles", "default", "page-miss interrupt service time"),
    "hyperbus_bw": (3.2e9, "bit/s", "default", "off-chip flash bandwidth, not frequency scaled"),
    "l3mram_bw": (4.0e9, "bit/s", "default", "on-chip L3 MRAM to L2 bandwidth at nominal clock"),
    "cluster_dma_bits": (64.0, "bit/cycle", "paper", "cluster DMA AXI width"),
    "mram_port_bits": (256.0, "bit/cycle", "paper", "dedicated weight port width"),
    "swap_bits": (32.0, "bit/cycle", "paper", "page swap CDC width"),
    "e_offchip": (75e-12, "J/bit", "derived-fit", "off-chip weight access"),
    "e_l3mram": (5e-12, "J/bit", "default", "L3 MRAM read and transfer to L2"),
    "e_l2l1": (2e-12, "J/bit", "default", "cluster DMA transfer L2 <-> L1"),
    "e_mram": (0.749e-12, "J/bit", "derived-fit", "weight MRAM read"),
    "e_l1": (0.12e-12, "J/bit", "default", "accelerator activation access to L1"),
    "e_l1_weights": (2.0e-12, "J/bit", "derived-fit", "accelerator weight stream read from L1"),
    "idle_fraction": (0.30, "1", "default", "share of peak power drawn while waiting on transfers"),
    "frame_idle_power": (0.020, "W", "default", "SoC idle power between frames"),
    "pf_dense_q8": (1.00, "1", "default", "active power factor, dense 3x3 at 8 bit"),
    "pf_dense_q2": (0.94, "1", "derived-fit", "active power factor, dense 3x3 at 2 bit"),
    "pf_pointwise": (0.42, "1", "derived-fit", "active power factor, pointwise"),
    "pf_depthwise": (0.50, "1", "default", "active power factor, depthwise"),
}


def _default_params() -> dict:
    return {k: Param(v, u, p) for k, (v, u, p, _) in SCHEMA.items()}


@dataclass(frozen=True)
class CalibrationSet:
    params: Mapping[str, Param] = field(default_factory=_default_params)

    def __post_init__(self):
        unknown = set(self.params) - set(SCHEMA)
        if unknown:
            raise KeyError(f"unknown calibration keys: {sorted(unknown)}")
        missing = set(SCHEMA) - set(self.params)
        if missing:
            merged = _default_params()
            merged.update(self.params)
            object.__setattr__(self, "params", merged)

    def __getitem__(self, key: str) -> float:
        return self.params[key].value

    def provenance(self, key: str) -> str:
        return self.params[key].provenance

    def updated(self, provenance: str | None = None, **values) -> "CalibrationSet":
        """Copy with new values; keeps units and optionally retags provenance."""
        p = dict(self.params)
        for k, v in values.items():
            if k not in SCHEMA:
                raise KeyError(f"unknown calibration key {k!r}")
            p[k] = Param(float(v), p[k].unit, provenance or p[k].provenance)
        return CalibrationSet(p)

    def operating_point(self, name: str) -> OperatingPoint:
        if name not in ("nominal", "low_power"):
            raise KeyError(f"unknown operating point {name!r}")
        f = self[f"{name}.cluster_freq"]
        return OperatingPoint(name, self[f"{name}.voltage"], f, self[f"{name}.cluster_power"], f / 2,
                              self[f"{name}.mram_power"])

    def job_params(self) -> JobParams:
        return JobParams(int(round(self["overhead_k"])), int(round(self["first_prefetch"])),
                         self["nq_cycles_per_channel"], bool(self["zero_launch"]))

    def links(self) -> dict[str, Link]:
        return default_links(
            hyperbus_bw=self["hyperbus_bw"], l3mram_bw=self["l3mram_bw"], dma_bits=self["cluster_dma_bits"],
            swap_bits=self["swap_bits"], setup=int(self["dma_setup"]), e_offchip=self["e_offchip"],
            e_l3mram=self["e_l3mram"], e_l2l1=self["e_l2l1"], e_mram=self["e_mram"], e_l1=self["e_l1_weights"],
            port_bits=int(self["mram_port_bits"]))

    def power_factor(self, mode: Mode, qw: int) -> float:
        """Active accelerator power as a fraction of the cluster's non-MRAM peak."""
        mode = Mode(mode)
        if mode is Mode.POINTWISE1X1:
            return self["pf_pointwise"]
        if mode is Mode.DEPTHWISE3X3:
            return self["pf_depthwise"]
        q2, q8 = self["pf_dense_q2"], self["pf_dense_q8"]
        return q2 + (q8 - q2) * (qw - 2) / 6

    def active_power(self, mode: Mode, qw: int, opp: OperatingPoint) -> float:
        return self.power_factor(mode, qw) * opp.core_power

    def mram_energy(self, opp: OperatingPoint) -> float:
        """MRAM read energy per bit at ``opp``, scaled from the calibrated nominal figure."""
        nominal = mram_energy_per_bit(self.operating_point("nominal"))
        return self["e_mram"] * mram_energy_per_bit(opp) / nominal

    def __eq__(self, other):
        return isinstance(other, CalibrationSet) and dict(self.params) == dict(other.params)


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_calibration(cal: CalibrationSet, path=None) -> str:
    width = max(len(k) for k in SCHEMA)
    lines = ["# key = value unit # provenance"]
    for k in SCHEMA:
        p = cal.params[k]
        lines.append(f"{k:<{width}} = {_fmt(p.value)} {p.unit} # {p.provenance}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_calibration(text: str, source=None) -> CalibrationSet:
    params = _default_params()
    seen = set()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        body, _, prov = line.partition("#")
        prov = prov.strip() or "default"
        key, eq, rest = body.partition("=")
        key = key.strip()
        if not eq:
            raise ParseError("expected 'key = value unit'", n, source)
        if key not in SCHEMA:
            raise ParseError(f"unknown key {key!r}", n, source)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", n, source)
        parts = rest.split()
        if len(parts) != 2:
            raise ParseError("expected a value and a unit", n, source)
        try:
            value = float(parts[0])
        except ValueError:
            raise ParseError(f"bad number {parts[0]!r}", n, source) from None
        if not math.isfinite(value):
            raise ParseError("value must be finite", n, source)
        if parts[1] != SCHEMA[key][1]:
            raise ParseError(f"unit for {key} must be {SCHEMA[key][1]!r}, got {parts[1]!r}", n, source)
        if prov not in PROVENANCES:
            raise ParseError(f"unknown provenance {prov!r}", n, source)
        params[key] = Param(value, parts[1], prov)
        seen.add(key)
    return CalibrationSet(params)


def load_calibration(path) -> CalibrationSet:
    return parse_calibration(Path(path).read_text(encoding="utf-8"), source=path)


def kernel_rate(spec, in_h: int, in_w: int, src: WeightSource | str, opp: OperatingPoint,
                cal: CalibrationSet = CalibrationSet()) -> tuple[float, float]:
    """(Op/s, Op/J) of one layer run as a single task.

    Power is the mode's active power plus MRAM streaming power for the bits
    actually read from the weight port.
    """
    from .timing import layer_cycles
    src = WeightSource(src)
    cyc = layer_cycles(spec, in_h, in_w, src, cal.job_params())
    seconds = cyc.total / opp.cluster_freq
    ops = 2 * spec.macs(in_h, in_w)
    throughput = ops / seconds
    energy = cal.active_power(spec.mode, spec.qw, opp) * seconds
    if src is WeightSource.MRAM:
        energy += cyc.weight_blocks * 256 * cal.mram_energy(opp)
    else:
        energy += cyc.weight_blocks * 256 * cal["e_l1_weights"]
    return throughput, ops / energy
