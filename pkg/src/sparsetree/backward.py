"""Gradients of the SparseMAP posterior with respect to tree and arc scores.

Within a neighbourhood where the support is fixed,

    dp(h) / df(h') = z[h, h'] - sigma(h) sigma(h') / zeta

with ``Z`` the inverse Gram matrix of the support indicators, ``sigma`` its
column sums and ``zeta`` their total. Trees outside the support have zero
probability and zero derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._cholesky import NumericalError
from .inference import SparsePosterior
from .structures import ContractError


@dataclass
class PosteriorJacobian:
    D: np.ndarray

    def __matmul__(self, other):
        return self.D @ other


def posterior_jacobian(post: SparsePosterior) -> PosteriorJacobian:
    Z = np.asarray(post.Z)
    sigma = Z.sum(axis=0)
    zeta = sigma.sum()
    if not zeta > 0:
        raise NumericalError(f"inverse Gram has non-positive total {zeta}")
    D = Z - np.outer(sigma, sigma) / zeta
    return PosteriorJacobian(0.5 * (D + D.T))


def grad_scores(post: SparsePosterior, gbar) -> np.ndarray:
    """Gradient of ``sum_h gbar(h) p(h)`` with respect to the arc-score table.

    Returned with the same ``(n + 1, n)`` layout as the scores; self-arc slots
    are zero.
    """
    gbar = np.asarray(gbar, dtype=np.float64)
    if gbar.shape != (len(post.support),):
        raise ContractError(f"expected {len(post.support)} per-tree weights, got {gbar.shape}")
    if len(post.support) == 1:
        return np.zeros((post.n + 1, post.n))
    D = posterior_jacobian(post).D
    df = D @ gbar  # gradient w.r.t. each support tree's score (D is symmetric)
    g = np.zeros((post.n + 1, post.n))
    cols = np.arange(post.n)
    for tree, w in zip(post.support, df):
        g[list(tree.heads), cols] += w
    return g


def expectation_backward(post: SparsePosterior, values, upstream):
    """Backward pass of ``rbar = sum_h q(h) r(h)``.

    ``values[i]`` is r(h) for the i-th support tree and ``upstream`` the
    gradient of the loss with respect to ``rbar``. Returns the arc-score
    gradient and the per-tree weights to backpropagate ``upstream`` through
    each r(h) (these are simply q).
    """
    if values is None or len(values) != len(post.support):
        raise ContractError("need one downstream value per support tree")
    upstream = np.asarray(upstream, dtype=np.float64)
    gbar = np.array([float(np.sum(upstream * np.asarray(v))) for v in values])
    return grad_scores(post, gbar), np.array(post.q, copy=True)
