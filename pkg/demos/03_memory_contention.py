"""
L1 bank contention and arbiter guarantees
==========================================

Cores and the accelerator share the same L1 banks through a two-branch
arbiter. Here we look at who waits, and for how long.
"""
from nvmsim.memory import (AccessTrace, ArbiterConfig, Branch, exhaustive_arbiter_check, l1_aggregate_bandwidth,
                           mram_bandwidth, tcdm_contention)

f = 360e6
print(f"MRAM port {mram_bandwidth(f) / 1e9:.2f} Gbit/s, L1 aggregate {l1_aggregate_bandwidth(f) / 1e9:.2f} Gbit/s")

# eight cores and one accelerator stream walking the same words, so every bank collides
traces = [AccessTrace(f"core{i}", 0, 64) for i in range(8)]
traces.append(AccessTrace("accel", 0, 64, branch=Branch.SHALLOW))
res = tcdm_contention(traces, ArbiterConfig())
for name, s in res.streams.items():
    print(f"  {name:>6}: finished at {s.finish_cycle:4d}, worst wait {s.max_wait}")

# every request pattern on a tiny instance, checked against the wait bound
summary = exhaustive_arbiter_check(ArbiterConfig(), length=6)
print(f"{summary.instances} patterns: max wait {summary.max_wait.tolist()} <= bound {summary.wait_bound.tolist()}:",
      summary.ok)
