"""Command-line entry point: ``python -m nvmsim`` or ``nvmsim``.

Exit codes: 0 success, 2 parse error, 3 unschedulable, 4 fit divergence.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .calibration import CalibrationSet, ParseError, emit_calibration, kernel_rate, load_calibration
from .network import load_network, shipped_mobilenet_v2, shipped_network_path
from .qnn import LayerSpec, Mode
from .runner import FitDiverged, compare_scenarios, emit_report, fit_calibration, load_targets, run_network
from .scenarios import SCENARIO_ORDER, get_scenario
from .scheduler import Unschedulable
from .timing import WeightSource, layer_cycles

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_UNSCHEDULABLE, EXIT_DIVERGED = 0, 1, 2, 3, 4

DATA = Path(__file__).parent / "data"
FITTED_CAL = DATA / "fitted.cal"

# benchmark shapes on a 6x6 output: one full job per task
PEAK_KERNELS = {
    "dense3x3": (Mode.DENSE3X3, 252, 32),
    "dw3x3": (Mode.DEPTHWISE3X3, 252, 252),
    "pw1x1": (Mode.POINTWISE1X1, 224, 32),
}


def _cal(path) -> CalibrationSet:
    return load_calibration(path) if path else load_calibration(FITTED_CAL)


def _net(path):
    return load_network(path) if path else shipped_mobilenet_v2()


def cmd_simulate(a) -> int:
    cal = _cal(a.cal)
    sc = get_scenario(a.scenario).with_paging(a.paging)
    report = run_network(_net(a.network), sc, cal.operating_point(a.opp), cal)
    text = emit_report(report, a.out)
    if not a.out:
        sys.stdout.write(text)
    print(f"{report.scenario} {report.opp}: {report.latency_s * 1e3:.3f} ms, {report.energy_j * 1e3:.3f} mJ, "
          f"{report.fps:.1f} fps, {report.average_power() * 1e3:.1f} mW at 30 fps", file=sys.stderr)
    return EXIT_OK


def cmd_compare(a) -> int:
    cal = _cal(a.cal)
    cmp = compare_scenarios(_net(a.network), cal.operating_point(a.opp), cal)
    print(f"{'scenario':<10}{'latency ms':>12}{'energy mJ':>12}{'speedup':>10}{'energy gain':>13}")
    for name, lat, en, lg, eg in cmp.table():
        print(f"{name:<10}{lat * 1e3:>12.3f}{en * 1e3:>12.3f}{lg:>10.2f}{eg:>13.2f}")
    return EXIT_OK


def cmd_peak(a) -> int:
    cal = _cal(a.cal)
    opp = cal.operating_point(a.opp)
    mode, c_in, c_out = PEAK_KERNELS[a.kernel]
    spec = LayerSpec(mode, c_in, c_out, a.qw)
    h = 6
    src = WeightSource(a.weights)
    thr, eff = kernel_rate(spec, h, h, src, opp, cal)
    cyc = layer_cycles(spec, h, h, src, cal.job_params())
    ideal = 2 * spec.macs(h, h) * opp.cluster_freq / cyc.execute
    print(f"{a.kernel} qw={a.qw} weights={a.weights} {opp.name}")
    print(f"  throughput         {thr / 1e9:10.1f} GOp/s")
    print(f"  efficiency         {eff / 1e12:10.3f} TOp/J")
    print(f"  execute-only ideal {ideal / 1e9:10.1f} GOp/s")
    print(f"  cycles             {cyc.total:.0f} (launch {cyc.launch:.1f}, execute {cyc.execute})")
    return EXIT_OK


def cmd_validate(a) -> int:
    from .validation import run_validation
    results = run_validation(quick=a.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def cmd_fit(a) -> int:
    targets = load_targets(a.targets) if a.targets else None
    base = load_calibration(a.cal) if a.cal else CalibrationSet()
    try:
        fr = fit_calibration(_net(a.network), targets, base)
    except FitDiverged as e:
        print(f"fit diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    for k in sorted(fr.errors):
        print(f"# {k:<22} {fr.metrics[k]:.4g}  rel. error {fr.errors[k]:.3f}", file=sys.stderr)
    text = emit_calibration(fr.cal, a.out)
    if not a.out:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvmsim", description="At-MRAM accelerator system model")
    sub = p.add_subparsers(dest="command", required=True)
    opp_choices = ("nominal", "low_power")

    s = sub.add_parser("simulate", help="run one network under one scenario")
    s.add_argument("--network", help=f"network .net file (default {shipped_network_path().name})")
    s.add_argument("--scenario", required=True, choices=[n.lower() for n in SCENARIO_ORDER],
                   type=str.lower)
    s.add_argument("--opp", default="nominal", choices=opp_choices)
    s.add_argument("--cal", help="calibration .cal file (default: shipped fitted set)")
    s.add_argument("--out", help="report CSV path (default stdout)")
    s.add_argument("--paging", action="store_true", help="allow weights larger than the store")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="latency and energy of all scenarios vs L3Flash")
    c.add_argument("--network")
    c.add_argument("--cal")
    c.add_argument("--opp", default="nominal", choices=opp_choices)
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("peak", help="single-kernel throughput and efficiency")
    k.add_argument("--kernel", required=True, choices=list(PEAK_KERNELS))
    k.add_argument("--qw", type=int, default=8)
    k.add_argument("--weights", default="mram", choices=("mram", "l1"))
    k.add_argument("--opp", default="nominal", choices=opp_choices)
    k.add_argument("--cal")
    k.set_defaults(func=cmd_peak)

    v = sub.add_parser("validate", help="oracle-equivalence and property checks")
    v.add_argument("--quick", action="store_true", help="reduced case counts")
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("fit", help="fit calibration constants to target aggregates")
    f.add_argument("--targets", help="targets file, 'name = value' per line (default: built-in set)")
    f.add_argument("--network")
    f.add_argument("--cal", help="starting calibration")
    f.add_argument("--out", help="write the fitted .cal here (default stdout)")
    f.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.func(a)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except Unschedulable as e:
        print(f"unschedulable: {e}", file=sys.stderr)
        return EXIT_UNSCHEDULABLE
    except FitDiverged as e:
        print(f"fit diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
