"""Decision-aware random forests for contextual stochastic optimization."""

from .core_model import Dataset, FitConfig, Forest, Split, Tree, leaf_of, make_dataset, read_csv, write_csv
from . import decide
from .decide import decide_many, forest_weights, knn_weights
from .estimator import KNNPolicy, SAAPolicy, StochOptForest
from .forest_builder import fit_forest, fit_tree, generate_candidate_splits, subsample
from .importance import mdi_importance, split_frequency
from .problems import (
    CVaRPortfolio,
    CVaRShortestPath,
    Newsvendor,
    SquaredError,
    VariancePortfolio,
    node_solve,
    problem_from_dict,
    solve_weighted,
)

__version__ = "0.1.0"

__all__ = [
    "CVaRPortfolio",
    "CVaRShortestPath",
    "Dataset",
    "FitConfig",
    "Forest",
    "KNNPolicy",
    "Newsvendor",
    "SAAPolicy",
    "Split",
    "SquaredError",
    "StochOptForest",
    "Tree",
    "VariancePortfolio",
    "decide",
    "decide_many",
    "fit_forest",
    "fit_tree",
    "forest_weights",
    "generate_candidate_splits",
    "knn_weights",
    "leaf_of",
    "make_dataset",
    "mdi_importance",
    "node_solve",
    "problem_from_dict",
    "read_csv",
    "solve_weighted",
    "split_frequency",
    "subsample",
    "write_csv",
]
