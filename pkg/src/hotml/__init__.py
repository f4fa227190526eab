"""Homotopy ML detection for one-bit and classical binary MIMO, plus its deep-unfolded network."""
from .baselines import box_relax_detect, exhaustive_ml, zf_detect
from .bench import BenchmarkRow, Detector, DetectorKind, ExperimentConfig, emit_csv, run_experiment
from .errors import HotmlError
from .model import ChannelKind, ChannelSpec, DetectionInstance, Mode, synthesize_batch, synthesize_instance
from .numerics import OpCounter, log_phi, phi, psi
from .objective import ObjectiveContext, build_context, f_value, grad_f, lipschitz_bound
from .solver import DualCurve, Schedule, SolverConfig, dual_value, gemm_solve, homotopy_solve, project_box
from .unfolded import NetworkParams, TrainConfig, forward, init_params, load_params, save_params, train

__version__ = "0.1.0"

__all__ = [
    "BenchmarkRow", "ChannelKind", "ChannelSpec", "DetectionInstance", "Detector", "DetectorKind", "DualCurve",
    "ExperimentConfig", "HotmlError", "Mode", "NetworkParams", "ObjectiveContext", "OpCounter", "Schedule",
    "SolverConfig", "TrainConfig", "box_relax_detect", "build_context", "dual_value", "emit_csv", "exhaustive_ml",
    "f_value", "forward", "gemm_solve", "grad_f", "homotopy_solve", "init_params", "lipschitz_bound",
    "load_params", "log_phi", "phi", "project_box", "psi", "run_experiment", "save_params", "synthesize_batch",
    "synthesize_instance", "train", "zf_detect",
]
