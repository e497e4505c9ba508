"""Low-light image enhancement with a shared encoder and a detail-refinement branch."""
from .data import make_synthetic_dataset, scan_paired_dataset
from .estimator import NEIDEnhancer
from .metrics import MetricsReport, psnr, ssim
from .model import ArchConfig, build_model
from .trainer import TrainConfig, enhance_image, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "MetricsReport",
    "NEIDEnhancer",
    "TrainConfig",
    "build_model",
    "enhance_image",
    "evaluate",
    "make_synthetic_dataset",
    "psnr",
    "scan_paired_dataset",
    "ssim",
    "train",
]
