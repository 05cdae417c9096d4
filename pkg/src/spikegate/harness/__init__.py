"""Data, models, training, experiment presets and the command line."""

from .ablation import PRESETS, AblationResult, preset_grid, run_ablation
from .config import RunConfig
from .data import DataFormatError, gen_synthetic_scenes, load_cifar10, synthetic_classification
from .model import Classifier, Detector, build_model
from .plots import bars_svg, emit_plots, loss_curves_svg
from .train import MetricsLog, NumericError, train

__all__ = [
    "PRESETS",
    "AblationResult",
    "Classifier",
    "DataFormatError",
    "Detector",
    "MetricsLog",
    "NumericError",
    "RunConfig",
    "bars_svg",
    "build_model",
    "emit_plots",
    "gen_synthetic_scenes",
    "load_cifar10",
    "loss_curves_svg",
    "preset_grid",
    "run_ablation",
    "synthetic_classification",
    "train",
]
