"""
lpsketch: average-distortion sketches for lp distances
"""

from .boosted import BoostedSketch, build_boosted, decode_boosted, repetitions_for
from .certification import (
    Certificate,
    HardDistributionSpec,
    certify_decode,
    is_valid_certificate,
    sample_hard_point,
)
from .config import ExperimentConfig
from .errors import (
    ConfigError,
    DatasetFormatError,
    DimensionMismatchError,
    EmptyDatasetError,
    LineageMismatchError,
    LpSketchError,
    ParameterError,
    SerializationError,
)
from .estimator import MultiScaleSketch, build_multiscale, estimate_distance
from .metric import Dataset, IntVector, coordinate_median, load_dataset, lp_distance, lp_norm
from .near_neighbor import AnnIndex, build_index, load_index, query_index, save_index
from .randomness import SharedSeed
from .single_scale import (
    Outcome,
    SketchOverrides,
    SingleScaleSketch,
    build_single_scale,
    decode_single_scale,
    derive_params,
    theory_params,
)

__version__ = "0.1.0"

__all__ = [
    "AnnIndex",
    "BoostedSketch",
    "Certificate",
    "ConfigError",
    "Dataset",
    "DatasetFormatError",
    "DimensionMismatchError",
    "EmptyDatasetError",
    "ExperimentConfig",
    "HardDistributionSpec",
    "IntVector",
    "LineageMismatchError",
    "LpSketchError",
    "MultiScaleSketch",
    "Outcome",
    "ParameterError",
    "SerializationError",
    "SharedSeed",
    "SingleScaleSketch",
    "SketchOverrides",
    "build_boosted",
    "build_index",
    "build_multiscale",
    "build_single_scale",
    "certify_decode",
    "coordinate_median",
    "decode_boosted",
    "decode_single_scale",
    "derive_params",
    "estimate_distance",
    "is_valid_certificate",
    "load_dataset",
    "load_index",
    "lp_distance",
    "lp_norm",
    "query_index",
    "repetitions_for",
    "sample_hard_point",
    "save_index",
    "theory_params",
]
