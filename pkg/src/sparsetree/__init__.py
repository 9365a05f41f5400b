"""Sparse posteriors over non-projective dependency trees and latent-tree models."""

from .backward import expectation_backward, grad_scores, posterior_jacobian
from .inference import (
    DensePosterior,
    SolverConfig,
    SparsePosterior,
    marginal_posterior,
    scale_temperature,
    sparsemap,
    sparsemap_brute,
)
from .map_oracle import map_brute, map_tree
from .structures import ArcScores, ContractError, DepTree, SizeLimitError, enumerate_trees, tree_score

__version__ = "0.1.0"
