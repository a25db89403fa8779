"""Deep k-NN label-noise filtering, baselines, and raw k-NN robustness simulations."""

__version__ = "0.1.0"

from .data import Dataset, SplitSpec, load_csv, make_blobs, split_clean_noisy
from .knn import Backend, KnnIndex, build_index, knn_query, knn_radius, min_knn_spread, min_pairwise_distance
from .noise import NoiseSpec, Scheme, corrupt
from .net import Architecture, DenseNet, TrainConfig, init, train
from .filtering import FilterConfig, run_pipeline

__all__ = [
    "Architecture",
    "Backend",
    "Dataset",
    "DenseNet",
    "FilterConfig",
    "KnnIndex",
    "NoiseSpec",
    "Scheme",
    "SplitSpec",
    "TrainConfig",
    "build_index",
    "corrupt",
    "init",
    "knn_query",
    "knn_radius",
    "load_csv",
    "make_blobs",
    "min_knn_spread",
    "min_pairwise_distance",
    "run_pipeline",
    "split_clean_noisy",
    "train",
]
