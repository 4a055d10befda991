"""Color appearance transfer from high-res stills to multi-view low-res capture."""

from .colortransfer import TPSParams, TransferConfig, apply_transfer, fit_multi_couple, fit_single_couple
from .imaging import chroma_key, color_histogram, load_png, resize_bicubic, save_png
from .matching import pair_couples, similarity_matrix, ssim
from .pipeline import PipelineConfig, evaluate_run, evaluate_sr, load_config, run_pipeline, run_stages, validate_manifest

__version__ = "0.1.0"

__all__ = [
    "TPSParams",
    "TransferConfig",
    "apply_transfer",
    "fit_multi_couple",
    "fit_single_couple",
    "chroma_key",
    "color_histogram",
    "load_png",
    "resize_bicubic",
    "save_png",
    "pair_couples",
    "similarity_matrix",
    "ssim",
    "PipelineConfig",
    "evaluate_run",
    "evaluate_sr",
    "run_stages",
    "load_config",
    "run_pipeline",
    "validate_manifest",
]
