"""On-chip memory levels, the MRAM weight port and the L1 bank arbiter."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numba
import numpy as np

KiB = 1024
MiB = 1024 * KiB

L1_BANKS = 16
BANK_BITS = 32
MRAM_LATENCY = 9
MRAM_PORT_BITS = 256


class LevelName(str, enum.Enum):
    L1_TCDM = "L1_TCDM"
    MRAM_WEIGHT = "MRAM_WEIGHT"
    TILE_SRAM = "TILE_SRAM"
    L2 = "L2"
    L3_FLASH = "L3_FLASH"


@dataclass(frozen=True)
class MemoryLevel:
    name: LevelName
    capacity: int
    port_width: float  # bits per cluster cycle
    banks: int
    clock_divider: int
    read_latency: int
    writable_at_runtime: bool
    read_energy: float  # J/bit
    write_energy: float  # J/bit

    def bandwidth(self, cluster_freq: float) -> float:
        return self.port_width * cluster_freq


def default_levels(mram_read_energy: float = 0.749e-12, l1_energy: float = 0.12e-12) -> dict:
    levels = [
        MemoryLevel(LevelName.L1_TCDM, 256 * KiB, 288, L1_BANKS, 1, 1, True, l1_energy, l1_energy),
        MemoryLevel(LevelName.MRAM_WEIGHT, 4 * MiB, MRAM_PORT_BITS, 4, 2, MRAM_LATENCY, False,
                    mram_read_energy, 50e-12),
        MemoryLevel(LevelName.TILE_SRAM, 4 * MiB, 64, 4, 1, 2, True, 0.2e-12, 0.2e-12),
        MemoryLevel(LevelName.L2, 2 * MiB, 64, 4, 1, 2, True, 0.2e-12, 0.2e-12),
        MemoryLevel(LevelName.L3_FLASH, 64 * MiB, 3.2e9 / 360e6, 1, 1, 100, False, 75e-12, 0.0),
    ]
    return {lv.name: lv for lv in levels}


def port_cycles(level: MemoryLevel, nbytes: int) -> int:
    if nbytes < 0:
        raise ValueError("negative byte count")
    return level.read_latency + math.ceil(nbytes * 8 / level.port_width)


def mram_stream(length: int) -> tuple[int, int]:
    """Sustained bits per cluster cycle and total cycles for a sequential MRAM read.

    Each of the two cuts of a bank returns 256 bits per MRAM cycle; at the
    1/2 clock divider that is 256 bits per cluster cycle after the 9-cycle
    first-word latency.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    return MRAM_PORT_BITS, MRAM_LATENCY + math.ceil(length * 8 / MRAM_PORT_BITS)


def mram_stream_segments(segments: Iterable[tuple[int, int]]) -> int:
    """Cycles for a list of ``(address, length)`` reads; each discontinuity restarts the latency."""
    cycles = 0
    expected = None
    for addr, length in segments:
        if length <= 0:
            continue
        latency = 0 if addr == expected else MRAM_LATENCY
        cycles += latency + math.ceil(length * 8 / MRAM_PORT_BITS)
        expected = addr + length
    return cycles


def mram_bandwidth(cluster_freq: float) -> float:
    return MRAM_PORT_BITS * cluster_freq


def l1_aggregate_bandwidth(cluster_freq: float, banks: int = L1_BANKS) -> float:
    return banks * BANK_BITS * cluster_freq


# --------------------------------------------------------------------------
# L1 interconnect arbitration

class InvalidConfig(ValueError):
    pass


class Branch(str, enum.Enum):
    LOG = "log"
    SHALLOW = "shallow"


@dataclass(frozen=True)
class ArbiterConfig:
    """Bandwidth shares between the logarithmic (cores/DMA) and shallow (accelerator) branches.

    Shares not guaranteed to either branch go to ``priority``.
    """

    min_share_shallow: float = 0.0
    min_share_log: float = 0.25
    priority: Branch = Branch.SHALLOW

    def __post_init__(self):
        object.__setattr__(self, "priority", Branch(self.priority))
        if self.min_share_log < 0 or self.min_share_shallow < 0:
            raise InvalidConfig("shares must be non-negative")
        if self.min_share_log + self.min_share_shallow > 1 + 1e-12:
            raise InvalidConfig("branch shares exceed 1")

    @property
    def weights(self) -> tuple[float, float]:
        """(log, shallow) arbitration weights summing to 1."""
        spare = 1.0 - self.min_share_log - self.min_share_shallow
        if self.priority is Branch.LOG:
            return self.min_share_log + spare, self.min_share_shallow
        return self.min_share_log, self.min_share_shallow + spare


@dataclass(frozen=True)
class AccessTrace:
    """A stream of 32-bit word accesses.

    Word ``(i0, i1, i2)`` is at ``start + i0*s0 + i1*s1 + i2*s2`` for
    ``strides = ((n0, s0), (n1, s1), (n2, s2))``, serialized innermost
    first. Without strides the stream is contiguous.
    """

    stream: str
    start: int
    length: int
    strides: Optional[tuple] = None
    issue_cycle: int = 0
    branch: Branch = Branch.LOG
    port_bits: int = BANK_BITS

    def addresses(self) -> np.ndarray:
        if self.length % 4:
            raise ValueError("length must be a whole number of 32-bit words")
        n_words = self.length // 4
        if self.strides is None:
            return self.start + 4 * np.arange(n_words, dtype=np.int64)
        (n0, s0), (n1, s1), (n2, s2) = self.strides
        if n0 * n1 * n2 != n_words:
            raise ValueError("stride pattern does not cover length")
        i2, i1, i0 = np.meshgrid(np.arange(n2), np.arange(n1), np.arange(n0), indexing="ij")
        addr = (self.start + i0 * s0 + i1 * s1 + i2 * s2).reshape(-1)
        if len(np.unique(addr)) != len(addr):
            raise ValueError("stride pattern revisits an address")
        return addr


def bank_of(address, banks: int = L1_BANKS):
    return (np.asarray(address) // 4) % banks


@dataclass
class StreamStats:
    served_words: int = 0
    stall_cycles: int = 0
    max_wait: int = 0
    finish_cycle: Optional[int] = None
    grants_per_cycle_max: int = 0


@dataclass
class ContentionResult:
    streams: dict
    bank_grants: np.ndarray  # (cycles, banks) stream index granted or -1
    branch_grants: np.ndarray  # (cycles, banks) 0 log, 1 shallow, -1 idle
    contended: np.ndarray  # (cycles, banks) both branches requested

    def __getitem__(self, key):
        return self.streams[key]


class _Swrr:
    """Smooth weighted round robin between the two branches of one bank."""

    __slots__ = ("w", "credit", "prio")

    def __init__(self, weights, prio: int):
        self.w = weights
        self.credit = [0.0, 0.0]
        self.prio = prio

    def pick(self) -> int:
        c = self.credit
        c[0] += self.w[0]
        c[1] += self.w[1]
        if c[0] > c[1] + 1e-12:
            win = 0
        elif c[1] > c[0] + 1e-12:
            win = 1
        else:
            win = self.prio
        c[win] -= 1.0
        return win


def tcdm_contention(traces: Sequence[AccessTrace], arb: ArbiterConfig = ArbiterConfig(),
                    horizon: int = 10_000, banks: int = L1_BANKS,
                    addresses: Optional[Sequence[np.ndarray]] = None) -> ContentionResult:
    """Cycle-by-cycle simulation of the two-branch L1 interconnect.

    Each stream keeps a window of its next ``port_bits/32`` unserved words
    outstanding (one word for core/DMA ports). Per bank and cycle at most one
    word is granted: round-robin among requesters of the same branch, smooth
    weighted round-robin between branches when both request.
    """
    n = len(traces)
    if addresses is None:
        addresses = [t.addresses() for t in traces]
    word_banks = [bank_of(a, banks) for a in addresses]
    served = [np.zeros(len(a), dtype=bool) for a in addresses]
    head = [0] * n
    widths = [max(1, t.port_bits // BANK_BITS) for t in traces]
    branch_idx = [0 if Branch(t.branch) is Branch.LOG else 1 for t in traces]
    prio = 0 if arb.priority is Branch.LOG else 1
    swrr = [_Swrr(arb.weights, prio) for _ in range(banks)]
    rr_last = [[-1, -1] for _ in range(banks)]
    stats = {t.stream: StreamStats() for t in traces}
    wait_since: list[dict] = [dict() for _ in range(n)]
    grants_log, branch_log, contended_log = [], [], []

    for cycle in range(horizon):
        if all(head[i] >= len(addresses[i]) for i in range(n)):
            break
        requests: dict[int, list[tuple[int, int]]] = {}
        for i, t in enumerate(traces):
            if cycle < t.issue_cycle or head[i] >= len(addresses[i]):
                continue
            seen = set()
            j, taken = head[i], 0
            while j < len(addresses[i]) and taken < widths[i]:
                if not served[i][j]:
                    b = int(word_banks[i][j])
                    if b not in seen:
                        seen.add(b)
                        requests.setdefault(b, []).append((i, j))
                        wait_since[i].setdefault(j, cycle)
                    taken += 1
                j += 1
        row = np.full(banks, -1, dtype=np.int64)
        brow = np.full(banks, -1, dtype=np.int64)
        crow = np.zeros(banks, dtype=bool)
        granted_now = [0] * n
        for b, reqs in requests.items():
            by_branch = ([r for r in reqs if branch_idx[r[0]] == 0], [r for r in reqs if branch_idx[r[0]] == 1])
            if by_branch[0] and by_branch[1]:
                crow[b] = True
                br = swrr[b].pick()
            else:
                br = 0 if by_branch[0] else 1
            cands = by_branch[br]
            last = rr_last[b][br]
            win = min(cands, key=lambda r: (r[0] - last - 1) % n)
            rr_last[b][br] = win[0]
            i, j = win
            served[i][j] = True
            granted_now[i] += 1
            s = stats[traces[i].stream]
            s.served_words += 1
            s.max_wait = max(s.max_wait, cycle - wait_since[i].pop(j))
            row[b], brow[b] = i, br
        for i, t in enumerate(traces):
            st = stats[t.stream]
            outstanding = [j for j in wait_since[i]]
            if outstanding:
                st.stall_cycles += 1
            st.grants_per_cycle_max = max(st.grants_per_cycle_max, granted_now[i])
            while head[i] < len(addresses[i]) and served[i][head[i]]:
                head[i] += 1
            if head[i] >= len(addresses[i]) and st.finish_cycle is None and len(addresses[i]):
                st.finish_cycle = cycle
        grants_log.append(row)
        branch_log.append(brow)
        contended_log.append(crow)

    shape = (0, banks)
    return ContentionResult(
        stats,
        np.array(grants_log).reshape(-1, banks) if grants_log else np.zeros(shape, dtype=np.int64),
        np.array(branch_log).reshape(-1, banks) if branch_log else np.zeros(shape, dtype=np.int64),
        np.array(contended_log).reshape(-1, banks) if contended_log else np.zeros(shape, dtype=bool),
    )


@dataclass
class BatchResult:
    max_wait: np.ndarray  # (B, M) longest wait of any request, in cycles
    finish: np.ndarray  # (B, M) cycle of the last grant, -1 if none
    max_discrepancy: np.ndarray  # (B,) worst |log wins - w_log*n| over contended windows
    cycles: np.ndarray  # (B,) cycles until all requests were served


@numba.njit(cache=True)
def _batch_kernel(bank_seq, branch, w_log, w_sh, prio, banks):
    B, M, L = bank_seq.shape
    max_wait = np.zeros((B, M), dtype=np.int64)
    finish = np.full((B, M), -1, dtype=np.int64)
    max_disc = np.zeros(B, dtype=np.float64)
    cycles = np.zeros(B, dtype=np.int64)
    ptr = np.zeros(M, dtype=np.int64)
    wait = np.zeros(M, dtype=np.int64)
    rr_last = np.zeros((banks, 2), dtype=np.int64)
    credit = np.zeros((banks, 2), dtype=np.float64)
    n_cont = np.zeros(banks, dtype=np.int64)
    wins = np.zeros(banks, dtype=np.int64)
    lo = np.zeros(banks, dtype=np.float64)
    hi = np.zeros(banks, dtype=np.float64)
    granted = np.zeros(M, dtype=np.bool_)
    for b in range(B):
        ptr[:] = 0
        wait[:] = 0
        rr_last[:, :] = -1
        credit[:, :] = 0.0
        n_cont[:] = 0
        wins[:] = 0
        lo[:] = 0.0
        hi[:] = 0.0
        cycle = 0
        remaining = M * L
        while remaining > 0:
            granted[:] = False
            for bk in range(banks):
                has0 = False
                has1 = False
                for m in range(M):
                    if ptr[m] < L and bank_seq[b, m, ptr[m]] == bk:
                        if branch[m] == 0:
                            has0 = True
                        else:
                            has1 = True
                if not (has0 or has1):
                    continue
                if has0 and has1:
                    credit[bk, 0] += w_log
                    credit[bk, 1] += w_sh
                    d = credit[bk, 0] - credit[bk, 1]
                    if d > 1e-12:
                        br = 0
                    elif d < -1e-12:
                        br = 1
                    else:
                        br = prio
                    credit[bk, br] -= 1.0
                    n_cont[bk] += 1
                    if br == 0:
                        wins[bk] += 1
                    dev = wins[bk] - w_log * n_cont[bk]
                    disc = max(abs(dev - lo[bk]), abs(dev - hi[bk]))
                    if disc > max_disc[b]:
                        max_disc[b] = disc
                    lo[bk] = min(lo[bk], dev)
                    hi[bk] = max(hi[bk], dev)
                else:
                    br = 0 if has0 else 1
                last = rr_last[bk, br]
                best = -1
                best_key = M + 1
                for m in range(M):
                    if ptr[m] < L and bank_seq[b, m, ptr[m]] == bk and branch[m] == br:
                        key = (m - last - 1) % M
                        if key < best_key:
                            best_key = key
                            best = m
                rr_last[bk, br] = best
                granted[best] = True
            for m in range(M):
                if ptr[m] >= L:
                    continue
                if granted[m]:
                    if wait[m] > max_wait[b, m]:
                        max_wait[b, m] = wait[m]
                    wait[m] = 0
                    if ptr[m] == L - 1:
                        finish[b, m] = cycle
                    ptr[m] += 1
                    remaining -= 1
                else:
                    wait[m] += 1
            cycle += 1
        cycles[b] = cycle
    return max_wait, finish, max_disc, cycles


def simulate_batch(bank_seq: np.ndarray, branch: Sequence[int], arb: ArbiterConfig = ArbiterConfig(),
                   banks: int = 2) -> BatchResult:
    """Run many small arbiter instances at once.

    ``bank_seq[b, m, k]`` is the bank of master ``m``'s ``k``-th single-word
    request in instance ``b``; masters issue back-to-back from cycle 0 with
    one outstanding request each. Arbitration rules are those of
    :func:`tcdm_contention`, which serves as the reference for this kernel.
    """
    bank_seq = np.ascontiguousarray(bank_seq, dtype=np.int8)
    branch = np.ascontiguousarray(branch, dtype=np.int8)
    w_log, w_sh = arb.weights
    prio = 0 if arb.priority is Branch.LOG else 1
    return BatchResult(*_batch_kernel(bank_seq, branch, float(w_log), float(w_sh), prio, banks))


@dataclass
class ExhaustiveSummary:
    instances: int
    max_wait: np.ndarray  # per master, worst over all instances
    wait_bound: np.ndarray  # per master
    max_discrepancy: float
    max_cycles: int

    @property
    def ok(self) -> bool:
        return bool(np.all(self.max_wait <= self.wait_bound) and self.max_discrepancy <= 1.0 + 1e-9)


def starvation_bound(arb: ArbiterConfig, branch: Sequence[int]) -> np.ndarray:
    """Per-master wait bound: ceil(1/share) times the masters of its branch."""
    w_log, w_sh = arb.weights
    out = []
    for br in branch:
        share = w_log if br == 0 else w_sh
        peers = sum(1 for b in branch if b == br)
        out.append(math.inf if share <= 0 else math.ceil(1 / share - 1e-9) * peers)
    return np.array(out, dtype=float)


def exhaustive_arbiter_check(arb: ArbiterConfig = ArbiterConfig(), branch: Sequence[int] = (0, 0, 1),
                             length: int = 8, banks: int = 2, chunk: int = 1 << 20) -> ExhaustiveSummary:
    """Run every per-master bank sequence of ``length`` requests through the arbiter."""
    m = len(branch)
    digits = np.array(list(np.ndindex(*([banks] * length))), dtype=np.int8)  # (banks**length, length)
    per_master = len(digits)
    total = per_master ** m
    worst = np.zeros(m, dtype=np.int64)
    disc = 0.0
    cyc = 0
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        seq = np.empty((len(idx), m, length), dtype=np.int8)
        rest = idx
        for j in range(m):
            seq[:, j] = digits[rest % per_master]
            rest = rest // per_master
        r = simulate_batch(seq, branch, arb, banks)
        worst = np.maximum(worst, r.max_wait.max(axis=0))
        disc = max(disc, float(r.max_discrepancy.max()))
        cyc = max(cyc, int(r.cycles.max()))
    return ExhaustiveSummary(total, worst, starvation_bound(arb, branch), disc, cyc)
