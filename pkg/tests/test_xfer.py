import pytest
from hypothesis import given, strategies as st

from nvmsim.calibration import CalibrationSet
from nvmsim.timing import NOMINAL, OperatingPoint
from nvmsim.xfer import (Link, UnknownLink, default_links, mram_energy_per_bit, transfer_cycles, transfer_energy,
                         transfer_time)

LINKS = default_links()
HALF = OperatingPoint("half", 0.8, 180e6, 0.3, 90e6, 0.05)


def test_cluster_dma_one_mib():
    t = transfer_time("cluster_dma", 1 << 20, NOMINAL, LINKS)
    assert t == pytest.approx(8 * (1 << 20) / 23.04e9 + 50 / 360e6)
    assert 8 * (1 << 20) / 23e9 == pytest.approx(365e-6, rel=0.003)


def test_zero_bytes():
    for name in LINKS:
        assert transfer_time(name, 0, NOMINAL, LINKS) == LINKS[name].setup / 360e6
        assert transfer_energy(name, 0, LINKS) == 0.0
        assert transfer_cycles(name, 0, NOMINAL, LINKS) == 0.0


def test_dma_ceiling():
    assert LINKS["cluster_dma"].bandwidth(NOMINAL) == pytest.approx(23.04e9)
    assert LINKS["mram_port"].bandwidth(NOMINAL) == pytest.approx(92.16e9)
    assert LINKS["cdc32_swap"].bits_per_cycle(NOMINAL) == pytest.approx(32)


def test_offchip_energy_of_network_weights(mnv2, fitted_cal):
    e = transfer_energy("hyperbus", mnv2.weight_bytes, fitted_cal.links())
    assert e == pytest.approx(0.55 * 3.8e-3, rel=0.01)
    assert fitted_cal["e_offchip"] == pytest.approx(75e-12, rel=0.01)


def test_mram_energy_per_bit():
    assert mram_energy_per_bit(NOMINAL) == pytest.approx(0.749e-12, rel=1e-3)
    assert CalibrationSet().mram_energy(NOMINAL) == pytest.approx(0.749e-12, rel=1e-3)


def test_unknown_link():
    with pytest.raises(UnknownLink):
        transfer_time("nope", 10, NOMINAL, LINKS)
    with pytest.raises(UnknownLink):
        transfer_energy("nope", 10)


def test_link_validation():
    with pytest.raises(ValueError):
        Link("x", "a", "b", 0.0)
    with pytest.raises(ValueError):
        Link("x", "a", "b", 1e9, setup=-1)


@given(st.sampled_from(sorted(LINKS)), st.integers(0, 10**9), st.integers(0, 10**9))
def test_energy_additive(name, a, b):
    assert transfer_energy(name, a + b, LINKS) == pytest.approx(
        transfer_energy(name, a, LINKS) + transfer_energy(name, b, LINKS), rel=1e-12, abs=1e-30)


@given(st.sampled_from(sorted(LINKS)), st.integers(1, 10**9))
def test_time_linear_beyond_setup(name, n):
    lk = LINKS[name]
    d = transfer_time(lk, 2 * n, NOMINAL) - transfer_time(lk, n, NOMINAL)
    assert d == pytest.approx(n * 8 / lk.bandwidth(NOMINAL), rel=1e-9)


def test_frequency_scaling():
    n = 1 << 20
    for name, lk in LINKS.items():
        ratio = (transfer_time(lk, n, HALF) - lk.setup / HALF.cluster_freq) / (
            transfer_time(lk, n, NOMINAL) - lk.setup / NOMINAL.cluster_freq)
        assert ratio == pytest.approx(1.0 if name == "hyperbus" else 2.0)
