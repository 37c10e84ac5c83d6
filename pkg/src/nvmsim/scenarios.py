"""The four weight-memory integration topologies."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .memory import KiB, MiB, LevelName, MemoryLevel, default_levels
from .timing import WeightSource

ACCEL_PORTS = ("l1_port", "mram_port")


@dataclass(frozen=True)
class ScenarioConfig:
    """Where weights live and which links carry them to the accelerator.

    ``weight_path`` lists links from the weight store to the accelerator.
    The last entry is the accelerator's own read port; its cost is part of
    the job model. Activations always travel over ``act_link``.
    """

    name: str
    weight_store: MemoryLevel
    weight_path: tuple[str, ...]
    act_link: str = "cluster_dma"
    store_read: str | None = None  # energy-only link charged per byte leaving the store
    paging: bool = False
    l1_capacity: int = 256 * KiB

    def __post_init__(self):
        if not self.weight_path or self.weight_path[-1] not in ACCEL_PORTS:
            raise ValueError("weight path must end at an accelerator port")

    @property
    def weight_source(self) -> WeightSource:
        return WeightSource.MRAM if self.weight_path[-1] == "mram_port" else WeightSource.L1

    @property
    def staging_links(self) -> tuple[str, ...]:
        """Links that stage a layer's weights into L2 ahead of the per-tile DMA."""
        return tuple(n for n in self.weight_path[:-1] if n != self.act_link)

    @property
    def weights_in_l1(self) -> bool:
        return self.weight_source is WeightSource.L1

    def with_paging(self, enabled: bool = True) -> "ScenarioConfig":
        return replace(self, paging=enabled)


def _scenarios() -> dict:
    lv = default_levels()
    mram = lv[LevelName.MRAM_WEIGHT]
    l3_mram = replace(mram, capacity=4 * MiB)
    return {
        "L3Flash": ScenarioConfig("L3Flash", lv[LevelName.L3_FLASH], ("hyperbus", "cluster_dma", "l1_port")),
        "L3MRAM": ScenarioConfig("L3MRAM", l3_mram, ("l3mram", "cluster_dma", "l1_port")),
        # the cluster DMA reads the MRAM cut directly; the read itself costs MRAM energy
        "L2MRAM": ScenarioConfig("L2MRAM", mram, ("cluster_dma", "l1_port"), store_read="mram_axi"),
        "L1MRAM": ScenarioConfig("L1MRAM", mram, ("mram_port",)),
    }


SCENARIOS = _scenarios()
SCENARIO_ORDER = ("L3Flash", "L3MRAM", "L2MRAM", "L1MRAM")


def get_scenario(name: str) -> ScenarioConfig:
    for key, sc in SCENARIOS.items():
        if key.lower() == name.lower():
            return sc
    raise KeyError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIO_ORDER)}")
