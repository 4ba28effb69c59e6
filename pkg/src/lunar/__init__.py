"""Local outlier detection as message passing on k-NN graphs, and LUNAR."""

from lunar.classic import (
    score_aggr_knn,
    score_dbscan,
    score_inflo,
    score_knn,
    score_lof,
    score_simple_lof,
)
from lunar.dataset import Dataset, apply_normalizer, fit_normalizer, load_csv, split
from lunar.metrics import auc
from lunar.model import TrainConfig, TrainedModel, load_model, save_model, score, train
from lunar.negatives import NegativeConfig, build_negative_set
from lunar.neighbors import KnnGraph, build_graph, knn_query

__version__ = "0.1.0"
