"""Graph-refined convolutional recommender for implicit feedback with content features."""
from grcn.gcn import Hyperparams, ModelParams, forward, init_params
from grcn.graph import InteractionGraph, build_graph, sample_triplets, split_per_user
from grcn.train import TrainReport, bpr_loss, fit

__all__ = [
    "Hyperparams",
    "InteractionGraph",
    "ModelParams",
    "TrainReport",
    "bpr_loss",
    "build_graph",
    "fit",
    "forward",
    "init_params",
    "sample_triplets",
    "split_per_user",
]
__version__ = "0.1.0"
