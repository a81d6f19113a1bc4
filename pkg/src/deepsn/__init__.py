"""Sheaf reaction-diffusion networks for influence estimation and seed selection."""
from .cascade import DiffusionModelSpec, estimate_sigma, exact_sigma_ic, exact_sigma_lt, simulate_batch
from .community import Partition, louvain, modularity
from .graph import Graph, WeightedGraph, build_weighted, load_edge_list
from .model import GnnConfig, GnnParams, forward
from .selection import allocate_budget, run_selection, select_seeds, soft_top_k
from .sheaf import Sheaf, assemble_laplacian, build_operator
from .training import TrainConfig, split_dataset, train_estimator

__version__ = "0.1.0"

__all__ = [
    "DiffusionModelSpec", "estimate_sigma", "exact_sigma_ic", "exact_sigma_lt", "simulate_batch",
    "Partition", "louvain", "modularity", "Graph", "WeightedGraph", "build_weighted", "load_edge_list",
    "GnnConfig", "GnnParams", "forward", "allocate_budget", "run_selection", "select_seeds", "soft_top_k",
    "Sheaf", "assemble_laplacian", "build_operator", "TrainConfig", "split_dataset", "train_estimator",
]
