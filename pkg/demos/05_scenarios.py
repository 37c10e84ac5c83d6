"""
Where should the weights live?
===============================

MobileNet-V2 under the four weight-store placements, using the shipped
fitted calibration.
"""
import sys

from nvmsim.calibration import load_calibration
from nvmsim.cli import FITTED_CAL
from nvmsim.network import shipped_mobilenet_v2
from nvmsim.runner import compare_scenarios, emit_report

cal = load_calibration(FITTED_CAL)
net = shipped_mobilenet_v2()
print(f"{net.name}: {len(net.layers)} layers, {net.weight_bytes / 2**20:.2f} MiB of weights")

for opp_name in ("nominal", "low_power"):
    reports = {}
    cmp = compare_scenarios(net, cal.operating_point(opp_name), cal, reports=reports)
    print(f"\n{opp_name}")
    for name, lat, en, lg, eg in cmp.table():
        avg = reports[name].average_power()
        print(f"  {name:<8} {lat * 1e3:6.2f} ms {en * 1e3:5.2f} mJ  x{lg:.2f} faster  x{eg:.2f} less energy"
              f"  {avg * 1e3:5.1f} mW at 30 fps")

# first lines of the per-layer report
text = emit_report(reports["L1MRAM"])
sys.stdout.write("\n" + "\n".join(text.splitlines()[:10]) + "\n")
