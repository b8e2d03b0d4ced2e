"""Weak-texture-map guided single-image super-resolution in NumPy."""

from .blocks import NetworkSpec, NetworkState, adam_step, build_network, l1_loss
from .config import TrainConfig, parse_config
from .metrics import EvalReport, evaluate_benchmark, psnr, ssim
from .pipeline import (
    PipelineBundle,
    StageCheckpoint,
    build_fused_input,
    infer,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "NetworkSpec", "NetworkState", "PipelineBundle", "StageCheckpoint", "TrainConfig",
    "adam_step", "build_fused_input", "build_network", "evaluate_benchmark", "infer", "l1_loss",
    "load_checkpoint", "parse_config", "psnr", "save_checkpoint", "ssim",
]
