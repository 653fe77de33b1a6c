"""Deep-learning jammer suppression for grant-free CDMA uplinks.

Modules: ``sigmodel`` (codes, precoding, jammer, datasets), ``network`` and
``layers`` (the numpy CNN), ``denoiser`` (input tensors, training,
inference), ``detector`` (MFB and RDD), ``harness`` (Monte-Carlo evaluation,
sweeps, configs) and ``cli``.
"""
from .denoiser import JammerSuppressor, TrainConfig, denoise, denoise_batch, train
from .detector import RDDDetector, mfb, mfb_batch, rdd_detect, rdd_detect_batch, run_error
from .harness import (
    ExperimentConfig,
    SweepResult,
    SweepSpec,
    evaluate,
    load_config,
    sweep,
)
from .network import NetworkConfig, TrainedModel, load_model, save_model
from .sigmodel import (
    QPSK,
    ScenarioConfig,
    SpreadingMatrix,
    generate_dataset,
    generate_scenario,
    hadamard_codes,
)

__version__ = "0.1.0"

__all__ = [
    "JammerSuppressor",
    "RDDDetector",
    "TrainConfig",
    "NetworkConfig",
    "ScenarioConfig",
    "ExperimentConfig",
    "SpreadingMatrix",
    "SweepSpec",
    "SweepResult",
    "TrainedModel",
    "QPSK",
    "hadamard_codes",
    "generate_scenario",
    "generate_dataset",
    "train",
    "denoise",
    "denoise_batch",
    "mfb",
    "mfb_batch",
    "rdd_detect",
    "rdd_detect_batch",
    "run_error",
    "evaluate",
    "sweep",
    "load_config",
    "load_model",
    "save_model",
]
