import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvmsim.calibration import CalibrationSet
from nvmsim.network import NetLayer, NetworkDesc
from nvmsim.paging import (PAGE_SIZE, AddressOutOfRange, Hit, Miss, PageState, PagedAddress, PagedWeightMemory,
                           PendingSwap, Region, SwapInProgress, check_trace, handle_miss, initial_layout,
                           map_address, network_accesses, proactive_swap, replay, run_paged, swap_cycles,
                           synthetic_network, trace_csv)
from nvmsim.qnn import QTensor, reference_layer
from nvmsim.runner import run_network
from nvmsim.scenarios import SCENARIOS
from nvmsim.xfer import transfer_cycles

SPACE = 8 * PAGE_SIZE


def test_hit_and_miss():
    st_ = PageState(0, 1)
    assert map_address(123, st_, SPACE) == Hit(Region.MRAM, 123)
    assert map_address(PAGE_SIZE + 5, st_, SPACE) == Hit(Region.TILE_SRAM, 5)
    assert map_address(2 * PAGE_SIZE, st_, SPACE) == Miss(2)
    with pytest.raises(AddressOutOfRange):
        map_address(SPACE, st_, SPACE)
    with pytest.raises(AddressOutOfRange):
        map_address(-1, st_, SPACE)


def test_random_addresses_match_two_entry_lookup():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        a, b = rng.choice(8, 2, replace=False)
        addr = int(rng.integers(0, SPACE))
        got = map_address(PagedAddress(addr), PageState(int(a), int(b)), SPACE)
        table = {int(a): Region.MRAM, int(b): Region.TILE_SRAM}
        page = addr >> 22
        want = Hit(table[page], addr & (PAGE_SIZE - 1)) if page in table else Miss(page)
        assert got == want


def test_page_state_invariants():
    with pytest.raises(ValueError):
        PageState(1, 1)
    with pytest.raises(ValueError):
        PageState(0, None, PendingSwap(3, 0, 1, Region.MRAM))
    with pytest.raises(ValueError):
        PageState(0, 1, PendingSwap(1, 0, 1))
    assert PageState(None, None).region_of(0) is None


def test_miss_stall_is_one_swap():
    cal = CalibrationSet()
    swap = swap_cycles(cal)
    link = transfer_cycles(cal.links()["cdc32_swap"], PAGE_SIZE)
    assert link == pytest.approx(50 + PAGE_SIZE * 8 / 32)
    assert swap == cal["miss_service"] + link
    st_, (start, end) = handle_miss(PageState(0, 1), 2 * PAGE_SIZE, 100.0, swap)
    assert (start, end) == (100.0, 100.0 + swap)
    assert st_.pending.page == 2 and st_.pending.region is Region.TILE_SRAM
    assert st_.page_reg_a == 0 and st_.page_reg_b is None  # old tile page invalidated
    assert st_.settle(end) == PageState(0, 2)


def test_miss_on_page_in_flight_waits_remaining():
    st_ = PageState(0, None, PendingSwap(2, 0.0, 1000.0))
    same, (start, end) = handle_miss(st_, 2 * PAGE_SIZE + 7, 400.0, 1000.0)
    assert same is st_ and end - start == 600.0
    with pytest.raises(SwapInProgress):
        handle_miss(st_, 3 * PAGE_SIZE, 400.0, 1000.0)


def test_alternating_pages_no_stall_after_warmup():
    # pages 0 (pinned) and 2, 0, 3, 0, 4 ... each read long enough to hide a swap
    swap = 1000.0
    acc = [(0, 1500.0)]
    for p in range(2, 8):
        acc += [(p, 1500.0), (0, 1500.0)]
    res = replay(acc, PageState(0, 1), swap, proactive=True)
    assert res.stall == 0.0
    assert check_trace(res.trace, PageState(0, 1))


def test_empty_plan_when_network_fits():
    acc = [(0, 10.0), (1, 10.0), (0, 5.0)]
    assert proactive_swap(acc, initial_layout(2), 1e6) == []


def test_twelve_mib_network_zero_stall_when_reads_are_slow():
    swap = swap_cycles()
    acc = [(0, 2e6), (1, 2e6), (2, 2e6)]
    res = replay(acc, initial_layout(3), swap)
    assert res.stall == 0.0
    assert res.plan == [(2e6, 2)]


@pytest.mark.parametrize("d1", [1e5, 5e5, 9e5, 1.2e6])
def test_twelve_mib_stall_matches_remaining_swap(d1):
    swap = swap_cycles()
    res = replay([(0, 3e5), (1, d1), (2, 3e5)], initial_layout(3), swap)
    assert res.stall == pytest.approx(max(0.0, swap - d1))


def test_reactive_pays_full_swap():
    swap = swap_cycles()
    res = replay([(0, 3e5), (1, 3e5), (2, 3e5)], initial_layout(3), swap, proactive=False)
    assert res.stall == swap


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 5), st.lists(st.tuples(st.integers(0, 4), st.floats(0, 3e6)), min_size=1, max_size=20),
       st.floats(1e3, 3e6))
def test_safety_liveness_and_proactive_dominance(n_pages, accesses, swap):
    acc = [(p % n_pages, d) for p, d in accesses]
    init = initial_layout(n_pages)
    pro = replay(acc, init, swap, proactive=True)
    rea = replay(acc, init, swap, proactive=False)
    assert check_trace(pro.trace, init) and check_trace(rea.trace, init)
    assert pro.stall <= rea.stall + 1e-6
    # liveness: each reactive miss waits at most one swap
    misses = sum(1 for e in rea.trace if e[1] == "miss")
    assert rea.stall <= misses * swap + 1e-6
    for _, ev, _ in pro.trace:
        assert ev in {"hit", "miss", "swap_start", "swap_done"}


def test_check_trace_flags_wrong_page():
    bad = [(0.0, "swap_start", 2), (1.0, "hit", 1)]
    assert not check_trace(bad, PageState(0, 1))
    assert check_trace([(0.0, "hit", 1)], PageState(0, 1))


def test_trace_csv(tmp_path):
    res = replay([(0, 10.0), (2, 10.0)], PageState(0, 1), 50.0, proactive=False)
    text = trace_csv(res.trace, tmp_path / "t.csv")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["cycle", "event", "page"]
    assert [r["event"] for r in rows] == ["hit", "miss", "swap_start", "swap_done", "hit"]
    assert (tmp_path / "t.csv").read_text() == text


def test_network_accesses_split_pages():
    acc = network_accesses([(PAGE_SIZE // 2, 100.0), (PAGE_SIZE, 200.0)])
    assert acc == [(0, 200.0), (1, 100.0)]


def test_paged_reader_detects_wrong_region_data():
    # reading through the memory returns the bytes of the requested page
    backing = np.repeat(np.arange(3, dtype=np.uint8), PAGE_SIZE)
    mem = PagedWeightMemory(backing, swap=100.0)
    for page in (1, 0, 2, 1):
        assert (mem.read(page * PAGE_SIZE + 64, 32) == page).all()
    assert mem.stall > 0
    assert check_trace(mem.trace, initial_layout(3))


def test_twelve_mib_network_runs_correctly_under_paging():
    specs, raws = synthetic_network()
    assert sum(s.weight_count for s in specs) == 12 * (1 << 20)
    x = QTensor(np.random.default_rng(1).integers(0, 256, (1, 1, 2048)).astype(np.uint8))
    y, mem = run_paged(x, specs, raws, swap=swap_cycles(), cycles_per_block=20.0)
    want = x
    for s, w in zip(specs, raws):
        want = reference_layer(want, w, s)
    assert y == want
    assert mem.stall == 0.0
    assert check_trace(mem.trace, initial_layout(3))
    assert [e for e in mem.trace if e[1] == "swap_start"][0][2] == 2


def test_run_network_adds_paging_stall(fitted_cal):
    specs, _ = synthetic_network()
    net = NetworkDesc("syn12", [NetLayer(f"pw{i}", s, 1, 1) for i, s in enumerate(specs)])
    opp = fitted_cal.operating_point("nominal")
    rep = run_network(net, SCENARIOS["L1MRAM"].with_paging(), opp, fitted_cal)
    d1 = rep.layers[1].latency_cycles
    swap = swap_cycles(fitted_cal, opp)
    assert rep.paging_stall_s == pytest.approx(max(0.0, swap - d1) / opp.cluster_freq)
    assert rep.latency_s == pytest.approx(sum(l.latency_s for l in rep.layers) + rep.paging_stall_s)
