"""segal: superpixel-based active labeling for semantic segmentation.

Pick regions worth a human click, merge what the model already agrees on,
sieve what it doubts, retrain, repeat.
"""

__version__ = "0.1.0"

from .merge import MergeConfig, adaptive_merge, js_distance
from .raster import Dataset, LabelMap, ProbMap, RasterError, Segmentation
from .sieve import SieveConfig, kneedle, sieve_superpixel

__all__ = [
    "Dataset",
    "LabelMap",
    "MergeConfig",
    "ProbMap",
    "RasterError",
    "Segmentation",
    "SieveConfig",
    "adaptive_merge",
    "js_distance",
    "kneedle",
    "sieve_superpixel",
    "__version__",
]
