"""Background-aware evaluation and suppression for crowd counting density maps.

The package splits counting error into foreground and background parts
(masks grown from annotated head points), generates Gaussian density
ground truth, scores predictions region by region, and provides a small
trainable model demonstrating mask-modulated background suppression.
"""

from .errors import (
    AnnotationParseError,
    CrowdBGError,
    FileFormatError,
    GridShapeError,
    ManifestError,
    NegativeDensityWarning,
    NumericError,
    ParameterError,
)
from .grids import BinaryMask, DensityMap, SoftMask, hadamard, masked_count, sequential_sum
from .gridio import read_density, read_mask, write_density, write_mask
from .annotations import (
    AnnotatedImage,
    Detection,
    HeadPoint,
    LoadReport,
    build_foreground_mask,
    estimate_head_sizes,
    gaussian_density_map,
    head_sizes_from_hints,
    load_annotations,
    load_detections,
)
from .losses import (
    DensityLossKind,
    LossConfig,
    LossOutput,
    bce_loss,
    combined_loss,
    density_loss,
    sigmoid,
)
from .metrics import (
    CrossEvalCell,
    CrossEvalResult,
    DecompositionReport,
    EvalPair,
    ImageSpec,
    Region,
    RegionMetrics,
    SweepCurve,
    alpha_sweep,
    cross_eval,
    decomposition_report,
    game,
    region_metrics,
)
from .manifest import (
    Manifest,
    load_eval_pairs,
    load_image_specs,
    load_manifest,
    load_predictions,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage",
    "AnnotationParseError",
    "BinaryMask",
    "CrossEvalCell",
    "CrossEvalResult",
    "CrowdBGError",
    "DecompositionReport",
    "DensityLossKind",
    "DensityMap",
    "Detection",
    "EvalPair",
    "FileFormatError",
    "GridShapeError",
    "HeadPoint",
    "ImageSpec",
    "LoadReport",
    "LossConfig",
    "LossOutput",
    "Manifest",
    "ManifestError",
    "NegativeDensityWarning",
    "NumericError",
    "ParameterError",
    "Region",
    "RegionMetrics",
    "SoftMask",
    "SweepCurve",
    "alpha_sweep",
    "bce_loss",
    "build_foreground_mask",
    "combined_loss",
    "cross_eval",
    "decomposition_report",
    "density_loss",
    "estimate_head_sizes",
    "game",
    "gaussian_density_map",
    "hadamard",
    "head_sizes_from_hints",
    "load_annotations",
    "load_detections",
    "load_eval_pairs",
    "load_image_specs",
    "load_manifest",
    "load_predictions",
    "masked_count",
    "read_density",
    "read_mask",
    "region_metrics",
    "sequential_sum",
    "sigmoid",
    "write_density",
    "write_mask",
    "__version__",
]
