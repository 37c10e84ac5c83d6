import subprocess
import sys

import pytest

from nvmsim.cli import EXIT_DIVERGED, EXIT_OK, EXIT_PARSE, EXIT_UNSCHEDULABLE, main
from nvmsim.runner import load_report


def test_simulate_writes_report(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["simulate", "--scenario", "l1mram", "--out", str(out)]) == EXIT_OK
    rep = load_report(out)
    assert rep.scenario == "L1MRAM" and len(rep.layers) == 53  # 52 convolutions plus the classifier
    assert "ms" in capsys.readouterr().err


def test_simulate_to_stdout(capsys):
    assert main(["simulate", "--scenario", "L3Flash", "--opp", "low_power"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("# network=")


def test_compare_table(capsys):
    assert main(["compare"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[0] == "scenario"
    assert [l.split()[0] for l in lines[1:]] == ["L3Flash", "L3MRAM", "L2MRAM", "L1MRAM"]
    assert lines[1].split()[-2:] == ["1.00", "1.00"]


@pytest.mark.parametrize("qw,gops", [(8, 698), (2, 1947)])
def test_peak_dense(capsys, qw, gops):
    assert main(["peak", "--kernel", "dense3x3", "--qw", str(qw)]) == EXIT_OK
    out = capsys.readouterr().out
    thr = float(next(l for l in out.splitlines() if "throughput" in l).split()[1])
    assert thr == pytest.approx(gops, rel=0.03)


def test_peak_other_kernels(capsys):
    for k in ("dw3x3", "pw1x1"):
        assert main(["peak", "--kernel", k, "--weights", "l1"]) == EXIT_OK
    assert capsys.readouterr().out.count("efficiency") == 2


def test_validate_quick(capsys):
    assert main(["validate", "--quick"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and all(l.startswith("PASS") for l in lines)


def test_parse_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.net"
    bad.write_text("conv dense3x3 8 8 3\n")
    assert main(["simulate", "--scenario", "l1mram", "--network", str(bad)]) == EXIT_PARSE
    assert "line 1" in capsys.readouterr().err
    cal = tmp_path / "bad.cal"
    cal.write_text("no_such_key = 1 s # default\n")
    assert main(["compare", "--cal", str(cal)]) == EXIT_PARSE


def test_unschedulable_exit(tmp_path, capsys):
    net = tmp_path / "wide.net"
    net.write_text("wide pw1x1 16 16 40000 16 1 8\n")
    assert main(["simulate", "--scenario", "l1mram", "--network", str(net)]) == EXIT_UNSCHEDULABLE
    assert "wide" in capsys.readouterr().err


def test_fit_divergence_exit(tmp_path):
    t = tmp_path / "t.txt"
    t.write_text("L1MRAM.latency = 1e-9\n")
    small = tmp_path / "one.net"
    small.write_text("c pw1x1 4 4 8 8 1 8\n")
    assert main(["fit", "--targets", str(t), "--network", str(small)]) == EXIT_DIVERGED


def test_fit_writes_calibration(tmp_path, capsys):
    t = tmp_path / "t.txt"
    t.write_text("dense8_gops = 698e9\ndense2_gops = 1947e9\n")
    out = tmp_path / "k.cal"
    assert main(["fit", "--targets", str(t), "--out", str(out)]) == EXIT_OK
    text = out.read_text()
    line = next(l for l in text.splitlines() if l.startswith("overhead_k"))
    assert "derived-fit" in line
    assert abs(float(line.split("=")[1].split()[0]) - 390) <= 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nvmsim", "peak", "--kernel", "pw1x1"], capture_output=True, text=True)
    assert r.returncode == 0 and "GOp/s" in r.stdout
    r = subprocess.run([sys.executable, "-m", "nvmsim", "simulate"], capture_output=True, text=True)
    assert r.returncode == 2
