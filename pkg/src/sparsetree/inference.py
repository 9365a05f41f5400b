"""Regularized inference over dependency trees: marginal, MAP and SparseMAP.

SparseMAP solves

    max_{q in simplex}  sum_h q(h) f(h) - 1/2 ||M q||^2

where ``M`` stacks tree indicator vectors as columns and ``f(h) = m_h . s``.
The active-set solver touches the exponentially large simplex only through
MAP calls on the residual scores ``s - u``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._cholesky import GramCholesky, NumericalError
from .map_oracle import map_tree
from .structures import (
    MAX_ENUM_N,
    ArcScores,
    ContractError,
    DepTree,
    SizeLimitError,
    enumerate_trees,
    indicator_matrix,
    num_arcs,
    tree_indicator,
)

logger = logging.getLogger(__name__)

BRUTE_MAX_N = 4

__all__ = [
    "SolverConfig",
    "SparsePosterior",
    "DensePosterior",
    "NumericalError",
    "marginal_posterior",
    "scale_temperature",
    "sparsemap",
    "sparsemap_brute",
    "objective",
]


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    kkt_tol: float = 1e-9
    ridge: float = 1e-10
    drop_tol: float = 1e-12

    def __post_init__(self):
        if self.max_iterations <= 0 or min(self.kkt_tol, self.ridge, self.drop_tol) <= 0:
            raise ContractError("solver settings must be positive")


@dataclass
class SparsePosterior:
    """Output of :func:`sparsemap`.

    ``u`` and the indicator columns use the dense ``(n + 1, n)`` arc layout,
    flattened head-major.
    """

    support: list[DepTree]
    q: np.ndarray
    u: np.ndarray
    Z: np.ndarray
    tau: float
    iterations: int
    converged: bool = True
    n: int = field(default=0)

    @property
    def M(self) -> np.ndarray:
        return indicator_matrix(self.support)

    def prob(self, tree: DepTree) -> float:
        for t, p in zip(self.support, self.q):
            if t == tree:
                return float(p)
        return 0.0

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {t.heads: float(p) for t, p in zip(self.support, self.q)}


@dataclass
class DensePosterior:
    trees: list[DepTree]
    p: np.ndarray
    converged: bool = True
    iterations: int = 0

    def prob(self, tree: DepTree) -> float:
        return float(self.p[self.trees.index(tree)])

    def marginals(self) -> np.ndarray:
        return indicator_matrix(self.trees) @ self.p


def _raw(scores) -> np.ndarray:
    return scores.s if isinstance(scores, ArcScores) else np.asarray(scores, dtype=np.float64)


def scale_temperature(scores: ArcScores, t: float) -> ArcScores:
    if not t > 0:
        raise ContractError(f"temperature must be positive, got {t}")
    return ArcScores(scores.s / t)


def marginal_posterior(scores: ArcScores) -> DensePosterior:
    """Gibbs distribution p(h) = exp(f(h)) / sum_h' exp(f(h')) by enumeration."""
    if scores.n > MAX_ENUM_N:
        raise SizeLimitError(f"marginal inference by enumeration needs n <= {MAX_ENUM_N}")
    trees = enumerate_trees(scores.n)
    f = indicator_matrix(trees).T @ scores.s.ravel()
    p = np.exp(f - logsumexp(f))
    return DensePosterior(trees, p)


def objective(q: np.ndarray, M: np.ndarray, f: np.ndarray) -> float:
    """SparseMAP objective q.f - 1/2 ||Mq||^2 (to be maximized)."""
    u = M @ q
    return float(q @ f - 0.5 * u @ u)


class _ActiveSet:
    def __init__(self, s_flat: np.ndarray, config: SolverConfig, bonus: dict):
        self.s = s_flat
        self.config = config
        self.bonus = bonus
        self.trees: list[DepTree] = []
        self.cols: list[np.ndarray] = []
        self.f: list[float] = []
        self.chol = GramCholesky(config.ridge)

    def add(self, tree: DepTree):
        m = tree_indicator(tree).ravel()
        cross = np.array([c @ m for c in self.cols])
        self.chol.append(cross, float(m @ m))
        self.trees.append(tree)
        self.cols.append(m)
        self.f.append(float(m @ self.s) + self.bonus.get(tree.heads, 0.0))

    def remove(self, i: int):
        self.chol.delete(i)
        del self.trees[i], self.cols[i], self.f[i]

    def kkt(self) -> tuple[np.ndarray, float]:
        """Restricted stationarity: q = Z (f - tau 1), sum q = 1."""
        f = np.array(self.f)
        Zf = self.chol.solve(f)
        Z1 = self.chol.solve(np.ones(len(f)))
        zeta = Z1.sum()
        tau = (Zf.sum() - 1.0) / zeta
        return Zf - tau * Z1, float(tau)

    def marginals(self, q: np.ndarray) -> np.ndarray:
        return np.column_stack(self.cols) @ q


def _oracle(s: np.ndarray, u: np.ndarray, bonus: dict) -> tuple[DepTree, float]:
    """Tree maximizing f(h) - m_h . u, with its value."""
    adj = s.ravel() - u
    best = map_tree(ArcScores(adj.reshape(s.shape)))
    best_val = float(tree_indicator(best).ravel() @ adj) + bonus.get(best.heads, 0.0)
    for heads, b in sorted(bonus.items()):
        tree = DepTree(heads)
        val = float(tree_indicator(tree).ravel() @ adj) + b
        if val > best_val:
            best, best_val = tree, val
    return best, best_val


def sparsemap(
    scores: ArcScores,
    config: SolverConfig | None = None,
    tree_bonus: dict | None = None,
) -> SparsePosterior:
    """SparseMAP posterior via the active-set method with a MAP oracle.

    ``tree_bonus`` optionally adds a score to individual trees (keyed by head
    tuple) on top of the arc-factored score. Those trees are checked
    explicitly by the oracle; it exists for per-tree sensitivity analysis and
    assumes small bonuses.
    """
    config = config or SolverConfig()
    bonus = {tuple(k): float(v) for k, v in (tree_bonus or {}).items()}
    s = _raw(scores)
    if not np.all(np.isfinite(s[:, :])):
        raise ContractError("arc scores must be finite")
    n = s.shape[1]
    s = ArcScores(s).s
    s_flat = s.ravel()

    act = _ActiveSet(s_flat, config, bonus)
    act.add(_oracle(s, np.zeros_like(s_flat), bonus)[0])
    q = np.ones(1)
    tau = act.f[0] - n
    converged = False
    it = 0

    for it in range(1, config.max_iterations + 1):
        # inner loop: restricted KKT solve with drop steps until q_hat is feasible
        while True:
            q_hat, tau = act.kkt()
            if q_hat.min() >= -config.drop_tol:
                keep = q_hat > 0
                if keep.all() or len(q_hat) == 1:
                    q = np.maximum(q_hat, 0.0)
                    break
                for i in np.flatnonzero(~keep)[::-1]:
                    act.remove(int(i))
                q = q[keep]
                continue
            neg = q_hat < q
            ratios = q[neg] / (q[neg] - q_hat[neg])
            j = int(np.argmin(ratios))
            gamma = ratios[j]
            drop = int(np.flatnonzero(neg)[j])
            q = q + gamma * (q_hat - q)
            act.remove(drop)
            q = np.delete(q, drop)

        u = act.marginals(q)
        cand, residual = _oracle(s, u, bonus)
        if residual <= tau + config.kkt_tol or cand in act.trees:
            converged = True
            break
        act.add(cand)
        q = np.append(q, 0.0)

    if not converged:
        logger.warning("sparsemap hit max_iterations=%d without certificate", config.max_iterations)

    # prune numerically-zero mass, then solve exactly on what survives
    tiny = np.flatnonzero(q < config.drop_tol)
    if len(tiny) and len(tiny) < len(q):
        for i in tiny[::-1]:
            act.remove(int(i))
        q_hat, tau = act.kkt()
        q = np.maximum(q_hat, 0.0)
    q = q / q.sum()

    post = SparsePosterior(
        support=list(act.trees),
        q=q,
        u=act.marginals(q),
        Z=act.chol.inverse(),
        tau=tau,
        iterations=it,
        converged=converged,
        n=n,
    )
    if len(post.support) > num_arcs(n):
        raise NumericalError("support exceeds the number of arcs")
    return post


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    mu = np.sort(v)[::-1]
    cssv = np.cumsum(mu) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = ind[mu - cssv / ind > 0][-1]
    theta = cssv[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def sparsemap_brute(
    scores: ArcScores,
    tol: float = 1e-10,
    max_iterations: int = 100_000,
    truncate: float = 1e-9,
) -> DensePosterior:
    """Same QP solved by projected gradient over the fully enumerated simplex."""
    n = scores.n
    if n > BRUTE_MAX_N:
        raise SizeLimitError(f"brute-force SparseMAP supports n <= {BRUTE_MAX_N}")
    trees = enumerate_trees(n)
    M = indicator_matrix(trees)
    f = M.T @ scores.s.ravel()
    G = M.T @ M
    step = 1.0 / np.linalg.eigvalsh(G)[-1]

    p = np.full(len(trees), 1.0 / len(trees))
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        grad = G @ p - f
        p_next = project_simplex(p - step * grad)
        if np.linalg.norm(p_next - p) / step <= tol:
            p = p_next
            converged = True
            break
        p = p_next
    if not converged:
        logger.warning("projected gradient did not reach tolerance %g", tol)
    p = np.where(p < truncate, 0.0, p)
    p = p / p.sum()
    return DensePosterior(trees, p, converged=converged, iterations=it)
