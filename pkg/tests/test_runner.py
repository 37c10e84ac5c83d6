import pytest

from nvmsim.calibration import CalibrationSet, ParseError
from nvmsim.network import NetLayer, NetworkDesc
from nvmsim.qnn import LayerSpec, Mode
from nvmsim.runner import (DEFAULT_TARGETS, FRAME_RATE, FitDiverged, compare_scenarios, emit_report,
                           fit_calibration, load_report, load_targets, parse_report, run_network)
from nvmsim.scenarios import SCENARIO_ORDER, SCENARIOS
from nvmsim.cli import DATA
from nvmsim.scheduler import Unschedulable

CAL = CalibrationSet()


@pytest.fixture(scope="module")
def fitted_reports(mnv2, fitted_cal):
    reports = {}
    cmp = compare_scenarios(mnv2, fitted_cal.operating_point("nominal"), fitted_cal, reports=reports)
    return cmp, reports


def test_empty_network_costs_nothing():
    r = run_network(NetworkDesc("empty"), SCENARIOS["L1MRAM"], CAL.operating_point("nominal"), CAL)
    assert r.latency_s == 0 and r.energy_j == 0


@pytest.mark.parametrize("name,lat,en", [("L3Flash", 12.6e-3, 3.8e-3), ("L1MRAM", 7.3e-3, 1.4e-3)])
def test_headline_scenarios(fitted_reports, name, lat, en):
    r = fitted_reports[1][name]
    assert r.latency_s == pytest.approx(lat, rel=0.15)
    assert r.energy_j == pytest.approx(en, rel=0.20)


def test_scenario_ratios(fitted_reports):
    cmp = fitted_reports[0]
    assert cmp.latency_gain("L1MRAM") == pytest.approx(1.7, abs=0.2)
    assert cmp.energy_gain("L1MRAM") == pytest.approx(3.0, abs=0.4)
    assert cmp.energy_gain("L3MRAM") == pytest.approx(2.0, abs=0.3)
    assert cmp.latency_gain("L2MRAM", over="L3MRAM") == pytest.approx(1.2, abs=0.1)
    assert cmp.latency_gain("L1MRAM", over="L2MRAM") - 1 == pytest.approx(0.27, abs=0.10)
    assert cmp.energy_gain("L1MRAM", over="L2MRAM") - 1 == pytest.approx(0.37, abs=0.10)


def test_scenario_against_itself(mnv2):
    cmp = compare_scenarios(mnv2, CAL.operating_point("nominal"), CAL, scenarios=("L2MRAM",), baseline="L2MRAM")
    assert cmp.latency_gain("L2MRAM") == 1.0 and cmp.energy_gain("L2MRAM") == 1.0


def test_totals_equal_layer_sums(fitted_reports):
    r = fitted_reports[1]["L3MRAM"]
    assert r.latency_s == pytest.approx(sum(l.latency_s for l in r.layers))
    assert r.energy_j == pytest.approx(sum(sum(l.energy.values()) for l in r.layers))
    assert sum(r.energy_by_part().values()) == pytest.approx(r.energy_j)
    assert r.fps == pytest.approx(1 / r.latency_s)
    assert r.mj_per_inference == pytest.approx(r.energy_j * 1e3)


def test_average_power(fitted_reports):
    r = fitted_reports[1]["L1MRAM"]
    idle = r.frame_idle_power * (1 - r.latency_s * FRAME_RATE)
    assert r.average_power() == pytest.approx(r.energy_j * 30 + idle)
    assert r.average_power() > r.energy_j * 30


def test_totals_monotone_default_calibration(mnv2):
    cmp = compare_scenarios(mnv2, CAL.operating_point("nominal"), CAL)
    order = ("L1MRAM", "L2MRAM", "L3MRAM", "L3Flash")
    lat = [cmp.latency_s[n] for n in order]
    en = [cmp.energy_j[n] for n in order]
    assert lat == sorted(lat) and en == sorted(en)


def test_low_power_energy_change_small(mnv2, fitted_cal):
    sc = SCENARIOS["L3Flash"]
    nom = run_network(mnv2, sc, fitted_cal.operating_point("nominal"), fitted_cal).energy_j
    low = run_network(mnv2, sc, fitted_cal.operating_point("low_power"), fitted_cal).energy_j
    assert abs(low - nom) / nom < 0.15


def test_report_roundtrip_and_determinism(mnv2, fitted_cal, tmp_path):
    opp = fitted_cal.operating_point("nominal")
    a = emit_report(run_network(mnv2, SCENARIOS["L2MRAM"], opp, fitted_cal), tmp_path / "a.csv")
    b = emit_report(run_network(mnv2, SCENARIOS["L2MRAM"], opp, fitted_cal))
    assert a == b
    back = load_report(tmp_path / "a.csv")
    assert emit_report(back) == a
    assert len(back.layers) == len(mnv2.layers)


def test_report_parse_errors():
    with pytest.raises(ParseError):
        parse_report("# network=x\nnot,a,header\n")
    good = emit_report(run_network(NetworkDesc("one", (NetLayer("c", LayerSpec(Mode.POINTWISE1X1, 8, 8), 4, 4),)),
                                   SCENARIOS["L1MRAM"], CAL.operating_point("nominal"), CAL))
    with pytest.raises(ParseError) as e:
        parse_report(good.rstrip("\n") + ",extra\n")
    assert e.value.line == good.count("\n")


def test_unschedulable_names_layer():
    net = NetworkDesc("big", (NetLayer("wide", LayerSpec(Mode.POINTWISE1X1, 40000, 16), 16, 16),))
    with pytest.raises(Unschedulable) as e:
        run_network(net, SCENARIOS["L1MRAM"], CAL.operating_point("nominal"), CAL)
    assert e.value.layer == "wide"


def test_shipped_targets_file():
    t = load_targets(DATA / "targets.txt")
    assert t.keys() == DEFAULT_TARGETS.keys()
    for k, v in DEFAULT_TARGETS.items():
        assert t[k] == pytest.approx(v, rel=1e-3)


def test_targets_parse_error(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("dense8_gops = 698e9\nbogus = 1\n")
    with pytest.raises(ParseError) as e:
        load_targets(p)
    assert e.value.line == 2


def test_closed_form_fit_constants(mnv2, fitted_cal):
    # these are solved in closed form and left untouched by the descent
    assert abs(fitted_cal["overhead_k"] - 390) <= 2
    assert fitted_cal["e_offchip"] == pytest.approx(0.55 * 3.8e-3 / (mnv2.weight_bytes * 8))
    assert fitted_cal["e_offchip"] == pytest.approx(75e-12, rel=0.02)
    assert fitted_cal["e_mram"] == pytest.approx(69e-3 / 92.16e9, rel=1e-3)
    assert fitted_cal.provenance("overhead_k") == "derived-fit"


def test_fit_diverges_on_absurd_target(mnv2):
    with pytest.raises(FitDiverged) as e:
        fit_calibration(mnv2, {"L1MRAM.latency": 1e-6}, CAL, free=(), sweeps=0)
    assert e.value.errors["L1MRAM.latency"] > 0.25


def test_fitted_set_provenance(fitted_cal):
    tags = {fitted_cal.provenance(k) for k in fitted_cal.params}
    assert tags <= {"paper", "derived-fit", "default"}
    assert "derived-fit" in tags
