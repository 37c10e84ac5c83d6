"""Software-assisted virtual paging of the accelerator's weight space.

Two physical 4 MiB regions hold live pages: the weight MRAM (region A,
pinned at runtime since MRAM is not rewritten during inference) and the
tile SRAM (region B, the only swap target). A read whose page is in neither
region stalls while the page is copied into B over the 32-bit swap link.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calibration import CalibrationSet
from .memory import MiB
from .qnn import BLOCK_BYTES
from .timing import NOMINAL, OperatingPoint
from .xfer import transfer_cycles

PAGE_SIZE = 4 * MiB


class AddressOutOfRange(IndexError):
    pass


class SwapInProgress(RuntimeError):
    pass


class Region(str, enum.Enum):
    MRAM = "mram"
    TILE_SRAM = "tile_sram"


@dataclass(frozen=True)
class PendingSwap:
    page: int
    start: float
    done: float
    region: Region = Region.TILE_SRAM


@dataclass(frozen=True)
class PageState:
    page_reg_a: Optional[int]  # resident in the MRAM region
    page_reg_b: Optional[int]  # resident in the tile SRAM region
    pending: Optional[PendingSwap] = None

    def __post_init__(self):
        a, b = self.page_reg_a, self.page_reg_b
        if a is not None and a == b:
            raise ValueError("both regions hold the same page")
        if self.pending is not None:
            if self.pending.region is not Region.TILE_SRAM:
                raise ValueError("only the tile SRAM region is swappable")
            if self.pending.page in (a, b):
                raise ValueError("swapping in a page that is already resident")

    def region_of(self, page: int) -> Optional[Region]:
        if page == self.page_reg_a:
            return Region.MRAM
        if page == self.page_reg_b:
            return Region.TILE_SRAM
        return None

    def settle(self, now: float) -> "PageState":
        """Apply a swap that has completed by ``now``."""
        if self.pending is not None and self.pending.done <= now:
            return PageState(self.page_reg_a, self.pending.page, None)
        return self


@dataclass(frozen=True)
class PagedAddress:
    addr: int

    @property
    def page(self) -> int:
        return self.addr // PAGE_SIZE

    @property
    def offset(self) -> int:
        return self.addr % PAGE_SIZE


@dataclass(frozen=True)
class Hit:
    region: Region
    offset: int


@dataclass(frozen=True)
class Miss:
    page: int


def map_address(addr: PagedAddress | int, st: PageState, space: int) -> Hit | Miss:
    """Compare the page prefix against both live page registers."""
    if not isinstance(addr, PagedAddress):
        addr = PagedAddress(int(addr))
    if not 0 <= addr.addr < space:
        raise AddressOutOfRange(f"address {addr.addr} outside weight space of {space} bytes")
    region = st.region_of(addr.page)
    if region is None:
        return Miss(addr.page)
    return Hit(region, addr.offset)


def swap_cycles(cal: CalibrationSet = CalibrationSet(), opp: OperatingPoint = NOMINAL) -> float:
    """Miss service plus one page over the 32-bit swap link."""
    return cal["miss_service"] + transfer_cycles(cal.links()["cdc32_swap"], PAGE_SIZE, opp)


def handle_miss(st: PageState, addr: PagedAddress | int, now: float, swap: float) -> tuple[PageState, tuple]:
    """Schedule the swap that resolves a miss; returns the new state and the stall interval."""
    if not isinstance(addr, PagedAddress):
        addr = PagedAddress(int(addr))
    page = addr.page
    if st.region_of(page) is not None:
        raise ValueError("handle_miss called on a resident page")
    if st.pending is not None:
        if st.pending.page == page:
            return st, (now, max(now, st.pending.done))
        raise SwapInProgress(f"region busy swapping page {st.pending.page}")
    # region B's old page is invalid from the first byte written
    return PageState(st.page_reg_a, None, PendingSwap(page, now, now + swap)), (now, now + swap)


def next_swap_target(pages: Sequence[int], i: int, st: PageState) -> Optional[int]:
    """Page to prefetch into region B while ``pages[i]`` is being read, or None.

    The target is the next scheduled page that is not resident. Region B may
    only be overwritten when it is not the active read target and its page
    is not needed again before the target.
    """
    if st.pending is not None or pages[i] == st.page_reg_b:
        return None
    for p in pages[i + 1:]:
        if p == st.page_reg_b:
            return None
        if st.region_of(p) is None:
            return p
    return None


@dataclass
class ReplayResult:
    stall: float
    finish: float
    trace: list = field(default_factory=list)  # (cycle, event, page)
    swaps: list = field(default_factory=list)  # (start, page)

    @property
    def plan(self) -> list:
        return self.swaps


def replay(accesses: Sequence[tuple[int, float]], initial: PageState, swap: float,
           proactive: bool = True) -> ReplayResult:
    """Replay ``(page, read_cycles)`` accesses against the two-region memory."""
    st = initial
    t = 0.0
    stall = 0.0
    res = ReplayResult(0.0, 0.0)
    pages = [p for p, _ in accesses]

    def settle(now):
        nonlocal st
        if st.pending is not None and st.pending.done <= now:
            res.trace.append((st.pending.done, "swap_done", st.pending.page))
            st = st.settle(now)

    def start(page, now):
        nonlocal st
        st = PageState(st.page_reg_a, None, PendingSwap(page, now, now + swap))
        res.trace.append((now, "swap_start", page))
        res.swaps.append((now, page))

    for i, (page, dur) in enumerate(accesses):
        settle(t)
        if st.region_of(page) is None:
            res.trace.append((t, "miss", page))
            if st.pending is not None and st.pending.page != page:
                wait = st.pending.done
                stall += wait - t
                t = wait
                settle(t)
            if st.pending is None:
                start(page, t)
            st, (_, end) = handle_miss(st, page * PAGE_SIZE, t, swap)
            stall += end - t
            t = end
            settle(t)
        res.trace.append((t, "hit", page))
        if proactive and (i == 0 or pages[i - 1] != page):
            target = next_swap_target(pages, i, st)
            if target is not None:
                start(target, t)
        t += dur
    settle(t)
    res.stall = stall
    res.finish = t
    return res


def proactive_swap(accesses: Sequence[tuple[int, float]], st: PageState, swap: float) -> list:
    """Swap plan ``[(start_cycle, page), ...]`` issued on page-switch events."""
    return replay(accesses, st, swap, proactive=True).swaps


def check_trace(trace: Sequence[tuple], initial: PageState) -> bool:
    """True when every hit reads a page resident at that instant."""
    a, b = initial.page_reg_a, initial.page_reg_b
    for _, event, page in trace:
        if event == "swap_start":
            b = None
        elif event == "swap_done":
            b = page
        elif event == "hit" and page not in (a, b):
            return False
    return True


def initial_layout(n_pages: int) -> PageState:
    """Pin the middle page in MRAM so the swap of the last page hides behind it."""
    if n_pages <= 0:
        return PageState(None, None)
    if n_pages == 1:
        return PageState(0, None)
    if n_pages == 2:
        return PageState(0, 1)
    return PageState(1, 0)


def trace_csv(trace: Sequence[tuple], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("cycle", "event", "page"))
    for cyc, ev, page in trace:
        w.writerow((repr(float(cyc)), ev, page))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def network_accesses(segments: Sequence[tuple[int, float]]) -> list[tuple[int, float]]:
    """Split ``(weight_bytes, read_cycles)`` per layer into per-page accesses of a packed weight space."""
    out = []
    addr = 0
    for nbytes, cycles in segments:
        end = addr + nbytes
        while addr < end:
            page = addr // PAGE_SIZE
            chunk = min(end, (page + 1) * PAGE_SIZE) - addr
            dur = cycles * chunk / nbytes
            if out and out[-1][0] == page:
                out[-1] = (page, out[-1][1] + dur)
            else:
                out.append((page, dur))
            addr += chunk
    return out


def network_paging_stall(net, report, cal: CalibrationSet, opp: OperatingPoint) -> float:
    """Seconds of page-miss stall for a network whose weights exceed the weight store."""
    segs = [(l.weight_bytes, r.latency_cycles) for l, r in zip(net.layers, report.layers)]
    acc = network_accesses(segs)
    n_pages = -(-net.weight_bytes // PAGE_SIZE)
    res = replay(acc, initial_layout(n_pages), swap_cycles(cal, opp), proactive=True)
    return res.stall / opp.cluster_freq


class PagedWeightMemory:
    """Functional paged weight store feeding the accelerator block reader.

    ``backing`` is the whole virtual weight space (bytes). Reads are served
    from the physical region buffers, so a wrong page shows up as wrong data.
    """

    def __init__(self, backing: np.ndarray, initial: PageState | None = None, swap: float = 0.0,
                 cycles_per_block: float = 1.0, schedule: Sequence[int] | None = None, proactive: bool = True):
        self.backing = np.asarray(backing, dtype=np.uint8)
        self.space = len(self.backing)
        n_pages = -(-self.space // PAGE_SIZE)
        self.state = initial if initial is not None else initial_layout(n_pages)
        self.swap = swap
        self.cycles_per_block = cycles_per_block
        self.schedule = list(schedule) if schedule is not None else list(range(n_pages))
        self.proactive = proactive
        self.clock = 0.0
        self.stall = 0.0
        self.trace: list = []
        self.phys = {Region.MRAM: np.zeros(PAGE_SIZE, np.uint8), Region.TILE_SRAM: np.zeros(PAGE_SIZE, np.uint8)}
        self._load(Region.MRAM, self.state.page_reg_a)
        self._load(Region.TILE_SRAM, self.state.page_reg_b)
        self._active: Optional[int] = None
        self._pos = -1

    def _page_bytes(self, page: int) -> np.ndarray:
        buf = np.zeros(PAGE_SIZE, np.uint8)
        chunk = self.backing[page * PAGE_SIZE:(page + 1) * PAGE_SIZE]
        buf[:len(chunk)] = chunk
        return buf

    def _load(self, region: Region, page: Optional[int]):
        if page is not None:
            self.phys[region][:] = self._page_bytes(page)

    def _settle(self):
        p = self.state.pending
        if p is not None and p.done <= self.clock:
            self.trace.append((p.done, "swap_done", p.page))
            self._load(Region.TILE_SRAM, p.page)
            self.state = self.state.settle(self.clock)

    def _start_swap(self, page: int):
        self.state = PageState(self.state.page_reg_a, None, PendingSwap(page, self.clock, self.clock + self.swap))
        self.trace.append((self.clock, "swap_start", page))

    def _switch_to(self, page: int):
        # advance the schedule cursor to this page and issue the proactive hint
        while self._pos + 1 < len(self.schedule) and self.schedule[self._pos + 1] != page:
            self._pos += 1
        self._pos += 1
        self._active = page
        if self.proactive and self._pos < len(self.schedule):
            target = next_swap_target(self.schedule, self._pos, self.state)
            if target is not None:
                self._start_swap(target)

    def read(self, addr: int, nbytes: int) -> np.ndarray:
        out = np.empty(nbytes, np.uint8)
        done = 0
        while done < nbytes:
            a = addr + done
            page_end = (a // PAGE_SIZE + 1) * PAGE_SIZE
            n = min(nbytes - done, page_end - a)
            out[done:done + n] = self._read_in_page(a, n)
            done += n
        return out

    def _read_in_page(self, addr: int, n: int) -> np.ndarray:
        self._settle()
        m = map_address(addr, self.state, self.space)
        if isinstance(m, Miss):
            self.trace.append((self.clock, "miss", m.page))
            p = self.state.pending
            if p is not None and p.page != m.page:
                self.stall += p.done - self.clock
                self.clock = p.done
                self._settle()
            if self.state.pending is None:
                self._start_swap(m.page)
            self.state, (_, end) = handle_miss(self.state, addr, self.clock, self.swap)
            self.stall += end - self.clock
            self.clock = end
            self._settle()
            m = map_address(addr, self.state, self.space)
            assert isinstance(m, Hit)
        page = addr // PAGE_SIZE
        if self.state.region_of(page) is not m.region:
            raise AssertionError("read served from a region holding another page")
        self.trace.append((self.clock, "hit", page))
        if page != self._active:
            self._switch_to(page)
        self.clock += self.cycles_per_block * (n / BLOCK_BYTES)
        return self.phys[m.region][m.offset:m.offset + n]

    def block_reader(self, base: int):
        """Reader for :func:`conv_neureka` over a stream stored at byte ``base``."""
        def reader(first: int, count: int) -> np.ndarray:
            raw = self.read(base + first * BLOCK_BYTES, count * BLOCK_BYTES)
            return raw.reshape(count, BLOCK_BYTES)
        return reader


def synthetic_network(n_layers: int = 3, channels: int = 2048, qw: int = 8, seed: int = 0):
    """Pointwise ``channels -> channels`` layers, each exactly ``channels**2 * qw / 8`` weight bytes.

    With the defaults every layer fills one 4 MiB page, 12 MiB in total.
    Returns ``(specs, raw_weights)``.
    """
    from .qnn import LayerSpec, Mode, RequantParams
    rng = np.random.default_rng(seed)
    lo, hi = -(1 << (qw - 1)), (1 << (qw - 1))
    shift = max(0, int(np.ceil(np.log2(channels * 255 * hi))) - 8)
    rq = RequantParams.uniform(channels, scale=1, bias=1 << (shift + 7), shift=shift)
    specs = [LayerSpec(Mode.POINTWISE1X1, channels, channels, qw, requant=rq) for _ in range(n_layers)]
    raws = [rng.integers(lo, hi, size=s.weight_shape, dtype=np.int64) for s in specs]
    return specs, raws


def run_paged(x, specs, raws, swap: float = 0.0, cycles_per_block: float = 1.0, proactive: bool = True):
    """Run a layer chain with all weights behind :class:`PagedWeightMemory`.

    Weight streams are packed back to back in one virtual space. Returns the
    final activations and the memory object (clock, stall, trace).
    """
    from .qnn import conv_neureka, pack_weights
    streams = [pack_weights(r, s) for r, s in zip(raws, specs)]
    bases, off = [], 0
    for ws in streams:
        bases.append(off)
        off += ws.nbytes
    backing = np.concatenate([ws.blocks.reshape(-1) for ws in streams]) if streams else np.zeros(0, np.uint8)
    schedule = [p for p, _ in network_accesses([(ws.nbytes, 1.0) for ws in streams])]
    mem = PagedWeightMemory(backing, swap=swap, cycles_per_block=cycles_per_block,
                            schedule=schedule, proactive=proactive)
    for spec, ws, base in zip(specs, streams, bases):
        x = conv_neureka(x, ws, spec, reader=mem.block_reader(base))
    return x, mem
