"""DMA and port links: memoryless time and energy cost functions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .timing import NOMINAL, OperatingPoint

REFERENCE_FREQ = NOMINAL.cluster_freq
DEFAULT_SETUP = 50


class UnknownLink(KeyError):
    pass


@dataclass(frozen=True)
class Link:
    """A transfer path between two memory levels.

    ``sustained_bw`` is given at the nominal cluster clock. On-chip links
    scale with the cluster clock; off-chip links (``scales=False``) do not.
    """

    name: str
    source: str
    dest: str
    sustained_bw: float  # bit/s at REFERENCE_FREQ
    setup: int = DEFAULT_SETUP  # cluster cycles per transfer
    energy_per_bit: float = 0.0  # J/bit, read + write + transport
    scales: bool = True
    category: str = "l2l1"  # energy bucket in reports

    def __post_init__(self):
        if not self.sustained_bw > 0:
            raise ValueError(f"{self.name}: sustained_bw must be positive")
        if self.setup < 0:
            raise ValueError(f"{self.name}: setup must be >= 0")

    def bandwidth(self, opp: OperatingPoint = NOMINAL) -> float:
        if self.scales:
            return self.sustained_bw * opp.cluster_freq / REFERENCE_FREQ
        return self.sustained_bw

    def bits_per_cycle(self, opp: OperatingPoint = NOMINAL) -> float:
        return self.bandwidth(opp) / opp.cluster_freq


def _resolve(link, table: Mapping[str, Link] | None) -> Link:
    if isinstance(link, Link):
        return link
    if table is None or link not in table:
        raise UnknownLink(link)
    return table[link]


def transfer_time(link, nbytes: float, opp: OperatingPoint = NOMINAL,
                  table: Mapping[str, Link] | None = None) -> float:
    """Seconds to move ``nbytes``: setup plus bits over the sustained bandwidth."""
    lk = _resolve(link, table)
    if nbytes < 0:
        raise ValueError("negative byte count")
    return lk.setup / opp.cluster_freq + nbytes * 8 / lk.bandwidth(opp)


def transfer_cycles(link, nbytes: float, opp: OperatingPoint = NOMINAL,
                    table: Mapping[str, Link] | None = None) -> float:
    """Same as :func:`transfer_time` in cluster cycles; zero bytes cost nothing."""
    if nbytes == 0:
        return 0.0
    return transfer_time(link, nbytes, opp, table) * opp.cluster_freq


def transfer_energy(link, nbytes: float, table: Mapping[str, Link] | None = None) -> float:
    lk = _resolve(link, table)
    if nbytes < 0:
        raise ValueError("negative byte count")
    return nbytes * 8 * lk.energy_per_bit


def mram_energy_per_bit(opp: OperatingPoint, port_bits: int = 256) -> float:
    """MRAM macro power over its streaming bandwidth."""
    return opp.mram_power / (port_bits * opp.cluster_freq)


def default_links(hyperbus_bw: float = 3.2e9, l3mram_bw: float = 4.0e9, dma_bits: int = 64,
                  swap_bits: int = 32, setup: int = DEFAULT_SETUP, e_offchip: float = 75e-12,
                  e_l3mram: float = 5e-12, e_l2l1: float = 2e-12, e_mram: float | None = None,
                  e_l1: float = 0.12e-12, e_swap: float | None = None, port_bits: int = 256) -> dict:
    f = REFERENCE_FREQ
    e_mram = mram_energy_per_bit(NOMINAL) if e_mram is None else e_mram
    e_swap = e_l2l1 if e_swap is None else e_swap
    links = [
        Link("hyperbus", "L3_FLASH", "L2", hyperbus_bw, setup, e_offchip, False, "offchip"),
        Link("l3mram", "MRAM_L3", "L2", l3mram_bw, setup, e_l3mram, True, "l3l2"),
        Link("cluster_dma", "L2", "L1_TCDM", dma_bits * f, setup, e_l2l1, True, "l2l1"),
        Link("mram_port", "MRAM_WEIGHT", "NEUREKA", port_bits * f, 0, e_mram, True, "mram_read"),
        # MRAM read by the cluster DMA over the 64-bit AXI
        Link("mram_axi", "MRAM_WEIGHT", "L1_TCDM", dma_bits * f, 0, e_mram, True, "mram_read"),
        Link("cdc32_swap", "L2", "TILE_SRAM", swap_bits * f, setup, e_swap, True, "l2l1"),
        Link("l1_port", "L1_TCDM", "NEUREKA", port_bits * f, 0, e_l1, True, "l1"),
    ]
    return {lk.name: lk for lk in links}
