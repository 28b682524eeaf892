"""Face and fingerprint feature extraction with feature-level fusion.

Pipeline: histogram equalisation -> Gabor filter-bank magnitudes -> PCA ->
Mahalanobis whitening + tanh normalisation -> average-sum fusion -> nearest
neighbour matching.
"""

__version__ = "0.1.0"

from .enhance import Histogram, equalize, histogram
from .errors import BiofuseError, ConfigError, DataError, DecodeError
from .fuse import WhiteningStats, fit_whitening, fuse, mahalanobis_distance, tanh_normalize, whiten
from .gabor import (
    FeatureVector,
    FilterBank,
    GaborParams,
    ResponseMap,
    build_bank,
    convolve,
    downsample,
    extract_features,
    gabor_kernel,
    magnitude_response,
)
from .imageio import DatasetManifest, GrayImage, ingest, load_pgm, resample, write_pgm
from .match import EvalReport, TemplateStore, enroll, evaluate, export_report, identify, verify
from .reduce import PcaModel, W2dpcaModel, fit_pca, fit_w2dpca, project, project_w2dpca

__all__ = [
    "BiofuseError", "ConfigError", "DataError", "DecodeError",
    "DatasetManifest", "GrayImage", "ingest", "load_pgm", "resample", "write_pgm",
    "Histogram", "equalize", "histogram",
    "FeatureVector", "FilterBank", "GaborParams", "ResponseMap", "build_bank", "convolve",
    "downsample", "extract_features", "gabor_kernel", "magnitude_response",
    "PcaModel", "W2dpcaModel", "fit_pca", "fit_w2dpca", "project", "project_w2dpca",
    "WhiteningStats", "fit_whitening", "fuse", "mahalanobis_distance", "tanh_normalize", "whiten",
    "EvalReport", "TemplateStore", "enroll", "evaluate", "export_report", "identify", "verify",
]
