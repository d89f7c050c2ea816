"""
nmsparse

N:M semi-structured sparsification of linear layer weights: importance
scoring, salient weight extraction, variance correction, masked
reconstruction and a compact rank-coded storage format.
"""

__version__ = "0.1.0"

from .codec import SparseEncodedTensor, decode, decode_layer, encode, encoded_size, spmv
from .config import PipelineConfig
from .errors import (
    ConfigError,
    FormatError,
    HeaderMismatchError,
    InvalidRankError,
    NMSparseError,
    NumericalError,
    PatternError,
    ShapeError,
    TruncatedStreamError,
)
from .flexibility import verify_dominance, verify_superset
from .importance import equalization_scales, magnitude_scores, ria_scores, score_layer
from .layer import PrunedLayer, SalientStore
from .patterns import NMMask, PatternShape, bits_per_element, config_count, rank_pattern, unrank_pattern
from .pipeline import (
    ablation_grid,
    extract_salient,
    output_error,
    prune_residual,
    run_pipeline,
    run_pipeline_detailed,
    variance_correct,
)
from .reconstruct import ReconstructionSettings, reconstruct_layer
from .storage import metadata_bits_report
from .tensor_core import (
    CalibrationSet,
    ChannelStats,
    WeightMatrix,
    channel_stats,
    synth_calibration,
    synth_outlier_matrix,
    tensor_variance,
)

__all__ = [
    "__version__",
    "CalibrationSet",
    "ChannelStats",
    "ConfigError",
    "FormatError",
    "HeaderMismatchError",
    "InvalidRankError",
    "NMMask",
    "NMSparseError",
    "NumericalError",
    "PatternError",
    "PatternShape",
    "PipelineConfig",
    "PrunedLayer",
    "ReconstructionSettings",
    "SalientStore",
    "ShapeError",
    "SparseEncodedTensor",
    "TruncatedStreamError",
    "WeightMatrix",
    "ablation_grid",
    "bits_per_element",
    "channel_stats",
    "config_count",
    "decode",
    "decode_layer",
    "encode",
    "encoded_size",
    "equalization_scales",
    "extract_salient",
    "magnitude_scores",
    "metadata_bits_report",
    "output_error",
    "prune_residual",
    "rank_pattern",
    "reconstruct_layer",
    "ria_scores",
    "run_pipeline",
    "run_pipeline_detailed",
    "score_layer",
    "spmv",
    "synth_calibration",
    "synth_outlier_matrix",
    "tensor_variance",
    "unrank_pattern",
    "variance_correct",
    "verify_dominance",
    "verify_superset",
]
