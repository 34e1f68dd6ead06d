"""Spectral-spatial hyperspectral image classification.

A four-layer spectral feature network trained under joint softmax and center
supervision, a deep pixel-pair discriminant CNN, test-time fusion of spectral
features through discriminant-estimated spatial kernels, and nearest-center /
kNN classification with OA, AA, and kappa reporting.
"""

from .annc import AnncConfig, AnncModel, extract_feature, extract_field, train_annc
from .classify import (CenterSet, MetricsReport, classify_center, classify_knn,
                       compute_metrics, confusion_matrix, estimate_centers)
from .config import ExperimentConfig, parse_config
from .discriminant import DiscConfig, DiscModel, pair_tensor, predict_same, train_disc
from .errors import (ConfigError, CsffError, DataError, FormatError,
                     NumericError, ShapeError, StateError)
from .fusion import (FusionConfig, SpatialKernel, SpatialMatrix, binarize,
                     build_neighborhood, fuse_feature, fuse_image,
                     normalize_kernel, spatial_matrix)
from .ingest import (DataSplit, LabelMap, PairSets, SpectralCube,
                     SyntheticSceneConfig, gen_synthetic, load_cube, load_labels,
                     pair_sets, save_cube, save_labels, stratified_split,
                     virtual_samples, zscore_normalize)
from .pipeline import RunReport, run_pipeline, sweep_neighborhood, sweep_threshold

__version__ = "0.1.0"
