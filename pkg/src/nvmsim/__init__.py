"""System model of a RISC-V cluster with an at-MRAM bit-serial convolution accelerator."""
from .calibration import CalibrationSet, ParseError, load_calibration, parse_calibration, emit_calibration
from .network import NetLayer, NetworkDesc, load_network, parse_network, emit_network, mobilenet_v2
from .qnn import LayerSpec, Mode, QTensor, RequantParams, WeightStream, conv_neureka, conv_ref, pack_weights
from .qnn import reference_layer, requantize, unpack_weights
from .runner import InferenceReport, FitDiverged, compare_scenarios, fit_calibration, run_network
from .runner import emit_report, load_report
from .scenarios import SCENARIOS, ScenarioConfig, get_scenario
from .scheduler import LayerReport, Regime, TileSchedule, Unschedulable, layer_timeline, plan_tiles
from .timing import LOW_POWER, NOMINAL, OperatingPoint, WeightSource

__all__ = [
    "CalibrationSet", "ParseError", "load_calibration", "parse_calibration", "emit_calibration",
    "NetLayer", "NetworkDesc", "load_network", "parse_network", "emit_network", "mobilenet_v2",
    "LayerSpec", "Mode", "QTensor", "RequantParams", "WeightStream", "conv_neureka", "conv_ref", "pack_weights",
    "reference_layer", "requantize", "unpack_weights",
    "InferenceReport", "FitDiverged", "compare_scenarios", "fit_calibration", "run_network",
    "emit_report", "load_report",
    "SCENARIOS", "ScenarioConfig", "get_scenario",
    "LayerReport", "Regime", "TileSchedule", "Unschedulable", "layer_timeline", "plan_tiles",
    "LOW_POWER", "NOMINAL", "OperatingPoint", "WeightSource",
]
