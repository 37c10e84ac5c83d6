"""
Kernel throughput and the shared fixed overhead
================================================

Two measured throughputs of the dense 3x3 benchmark pin down one fixed
per-task overhead. The same constant then predicts every other precision.
"""
from nvmsim.calibration import CalibrationSet, kernel_rate
from nvmsim.qnn import LayerSpec, Mode
from nvmsim.runner import solve_overhead
from nvmsim.timing import layer_cycles

cal = CalibrationSet()
nom = cal.operating_point("nominal")

# closed form: cycles = execute + K, for 8-bit and 2-bit weights
k8, k2 = solve_overhead(698e9, 1947e9, nom.cluster_freq)
print(f"overhead implied by 8b: {k8:.1f} cycles, by 2b: {k2:.1f} cycles")
cal = cal.updated("derived-fit", overhead_k=round((k8 + k2) / 2))

for qw in range(2, 9):
    spec = LayerSpec(Mode.DENSE3X3, 252, 32, qw)
    thr, eff = kernel_rate(spec, 6, 6, "mram", nom, cal)
    print(f"  qw={qw}: {thr / 1e9:7.1f} GOp/s  {eff / 1e12:5.2f} TOp/J")

# weights streamed from MRAM versus copied into L1 first
p = cal.job_params()
for name, spec in (("pointwise", LayerSpec(Mode.POINTWISE1X1, 224, 32, 8)),
                   ("dense 2b", LayerSpec(Mode.DENSE3X3, 252, 32, 2)),
                   ("depthwise", LayerSpec(Mode.DEPTHWISE3X3, 252, 252, 8))):
    l1 = layer_cycles(spec, 6, 6, "l1", p).total
    mram = layer_cycles(spec, 6, 6, "mram", p).total
    print(f"{name:>10}: {l1:.0f} cycles from L1, {mram:.0f} from MRAM, speedup {l1 / mram:.2f}")
