"""
Tiling a layer and reading its bottleneck
==========================================

Each layer is cut into double-buffered L1 tiles. The resulting pipeline is
timed in closed form and by replaying events, and labelled by what limits it.
"""
from nvmsim.calibration import CalibrationSet
from nvmsim.network import shipped_mobilenet_v2
from nvmsim.qnn import LayerSpec, Mode
from nvmsim.runner import run_network
from nvmsim.scenarios import SCENARIOS
from nvmsim.scheduler import analytic_latency, dump_schedule, event_latency, plan_tiles, step_costs

cal = CalibrationSet()
opp = cal.operating_point("nominal")
sc = SCENARIOS["L3Flash"]

ts = plan_tiles(LayerSpec(Mode.DENSE3X3, 32, 64), (112, 112), sc, cal, "demo")
print("tile (h, w, c_in, c_out):", ts.tile, " grid:", ts.counts, f" L1 use {ts.buffer_bytes() / 1024:.0f} KiB")
print(dump_schedule([ts]))

costs = step_costs(ts, sc, opp, cal)
latency, fill = analytic_latency(costs)
print(f"closed form {latency:.0f} cycles, event replay {event_latency(costs):.0f}, one fill = {fill:.0f}")

# per-stage regimes of MobileNet-V2 with weights off chip
rep = run_network(shipped_mobilenet_v2(), sc, opp, cal)
for k, st in rep.stages().items():
    print(f"  stage {k}: {st.latency_s * 1e3:6.2f} ms  {st.regime.value}")
