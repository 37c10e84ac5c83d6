"""
Running a network bigger than the weight store
===============================================

Twelve MiB of weights, four MiB pages, one swappable region. A proactive
swap of the next page hides behind the reads of the current one.
"""
import numpy as np

from nvmsim.paging import initial_layout, replay, run_paged, swap_cycles, synthetic_network, trace_csv
from nvmsim.qnn import QTensor, reference_layer

specs, raws = synthetic_network()
swap = swap_cycles()
print(f"{len(specs)} layers, swap of one page = {swap:,.0f} cycles")

x = QTensor(np.random.default_rng(0).integers(0, 256, (2, 2, 2048)).astype(np.uint8))
want = x
for s, w in zip(specs, raws):
    want = reference_layer(want, w, s)

for rate in (1.0, 20.0):
    y, mem = run_paged(x, specs, raws, swap=swap, cycles_per_block=rate)
    print(f"{rate:4.0f} cycles per block: stall {mem.stall:,.0f} cycles, output correct: {y == want}")
events = trace_csv(mem.trace).splitlines()
print("\n".join([events[0]] + [e for e in events[1:] if "hit" not in e]))

# the same question as a pure schedule: pages and how long each is read
acc = [(0, 4e5), (1, 6e5), (2, 3e5), (0, 2e5), (1, 9e5)]
init = initial_layout(3)
for proactive in (False, True):
    r = replay(acc, init, swap, proactive=proactive)
    print(f"{'proactive' if proactive else 'reactive':>9}: stall {r.stall:,.0f} cycles, {len(r.swaps)} swaps")
