"""Exact all-k-nearest-neighbors on paired compressed cover trees."""
from .covertree import (
    CompressedCoverTree,
    build_tree,
    deserialize_tree,
    essential_levels,
    height_set,
    serialize_tree,
    validate_tree,
)
from .errors import ContractError, InputError, TraversalError, TreeValidationError, VerificationError
from .knn import KnnResult, NeighborBuffer, knn_bruteforce, knn_paired
from .metric import EuclideanSet, GraphPointSet, MatrixSet, TrainLineGraph, read_points_csv
from .traversal import TraversalStats, imbalance, paired_traversal

__version__ = "0.1.0"
