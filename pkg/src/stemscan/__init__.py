"""Partial-scan STEM simulation: scan paths, shot noise, completion, denoising, metrics and ALRC."""

__version__ = "0.1.0"

from .acquisition import PartialScan, DoseModel, apply_poisson, infill_nearest, sample_scan
from .alrc import AlrcState, alrc_transform, huber_transform, run_synthetic_training
from .completion import IDW, Diffusion, Nearest, complete, coverage_sweep
from .denoise import benchmark_denoisers, denoise
from .image import load_image, save_image
from .metrics import ErrorMap, masked_rmse, ssim
from .scan_path import (BinaryMask, CoverageError, ScanPath, archimedes_spiral,
                        jittered_grid_path, rasterize)
from .seeds import derive_seed

__all__ = [
    "AlrcState", "BinaryMask", "CoverageError", "Diffusion", "DoseModel", "ErrorMap", "IDW",
    "Nearest", "PartialScan", "ScanPath", "alrc_transform", "apply_poisson", "archimedes_spiral",
    "benchmark_denoisers", "complete", "coverage_sweep", "denoise", "derive_seed",
    "huber_transform", "infill_nearest", "jittered_grid_path", "load_image", "masked_rmse",
    "rasterize", "run_synthetic_training", "sample_scan", "save_image", "ssim",
]
