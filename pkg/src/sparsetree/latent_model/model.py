"""Latent-tree classifier: expectations over a sparse posterior of parses.

The prediction for an input is ``sum_h q(h) g(h)`` where ``q`` is the
SparseMAP posterior over trees and ``g(h)`` is the output of a network whose
computation graph is built from ``h``. Only trees in the support are ever
evaluated, in both the forward and the backward pass.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..backward import expectation_backward, grad_scores
from ..inference import SolverConfig, SparsePosterior, scale_temperature, sparsemap
from ..structures import (
    ArcScores,
    ContractError,
    DepTree,
    Sentence,
    flat_tree,
    left_to_right_tree,
    tree_indicator,
)
from . import layers
from .params import GradientTape, ModelParams

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
STRUCTURES = ("latent", "flat", "left_to_right")

__all__ = [
    "LatentConfig",
    "ForwardResult",
    "encode",
    "score_arcs",
    "compose_tree",
    "forward_latent",
    "pair_forward",
    "expected_representation",
    "nll_loss",
    "nll_grad",
    "cosine_loss",
    "cosine_grad",
    "backward_latent",
    "point_mass",
    "flat_tree",
    "left_to_right_tree",
]


@dataclass(frozen=True)
class LatentConfig:
    """How the tree distribution is obtained at forward time.

    ``structure`` is ``"latent"`` (SparseMAP over parses), ``"flat"``,
    ``"left_to_right"``, or a fixed :class:`DepTree` for externally supplied
    parses. Fixed structures leave the parser without gradient.
    """

    temperature: float = 1.0
    structure: object = "latent"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ContractError("temperature must be positive")
        if not isinstance(self.structure, DepTree) and self.structure not in STRUCTURES:
            raise ContractError(f"unknown structure {self.structure!r}")


def _tokens(sentence) -> tuple[int, ...]:
    if isinstance(sentence, Sentence):
        return sentence.token_ids
    return Sentence(tuple(sentence)).token_ids


def point_mass(tree: DepTree) -> SparsePosterior:
    """Posterior that puts all mass on one tree (MAP or a fixed baseline)."""
    m = tree_indicator(tree).ravel()
    return SparsePosterior(
        support=[tree], q=np.ones(1), u=m, Z=np.array([[1.0 / tree.n]]),
        tau=float("nan"), iterations=0, converged=True, n=tree.n,
    )


def encode(sentence, params: ModelParams, prefix: str = "") -> np.ndarray:
    return layers.encode_forward(_tokens(sentence), params, prefix)[0]


def score_arcs(vectors, params: ModelParams) -> ArcScores:
    return layers.score_arcs_forward(np.asarray(vectors, dtype=np.float64), params)[0]


def compose_tree(tree: DepTree, vectors, params: ModelParams, child_order=None) -> np.ndarray:
    return layers.compose_forward(tree, np.asarray(vectors, dtype=np.float64), params, child_order)[0]


@dataclass
class _Side:
    """Everything computed for one sentence up to the tree posterior."""

    tokens: tuple[int, ...]
    enc_cache: tuple
    parser_enc_cache: tuple | None
    V: np.ndarray
    score_cache: tuple | None
    scores: ArcScores | None
    posterior: SparsePosterior
    tree_vecs: list[np.ndarray]
    tree_caches: list[tuple]


@dataclass
class ForwardResult:
    """Output of a forward pass and what the backward pass needs."""

    output: np.ndarray
    posterior: SparsePosterior
    per_tree: list[np.ndarray]
    task: str
    config: LatentConfig
    sides: list[_Side]
    head_caches: list
    weights: np.ndarray
    pair_index: list[tuple[int, int]] = field(default_factory=list)
    posterior_b: SparsePosterior | None = None

    @property
    def converged(self) -> bool:
        return all(s.posterior.converged for s in self.sides)


def _run_side(sentence, params: ModelParams, config: LatentConfig) -> _Side:
    tokens = _tokens(sentence)
    V, enc_cache = layers.encode_forward(tokens, params)
    n = len(tokens)
    parser_cache = scores = score_cache = None
    if config.structure == "latent":
        if params.config.share_embeddings:
            Vp = V
        else:
            Vp, parser_cache = layers.encode_forward(tokens, params, "parser_")
        scores, score_cache = layers.score_arcs_forward(Vp, params)
        post = sparsemap(scale_temperature(scores, config.temperature), config.solver)
        if not post.converged:
            logger.warning("solver did not converge for tokens %s", tokens)
    elif config.structure == "flat":
        post = point_mass(flat_tree(n))
    elif config.structure == "left_to_right":
        post = point_mass(left_to_right_tree(n))
    else:
        if config.structure.n != n:
            raise ContractError("fixed tree does not match sentence length")
        post = point_mass(config.structure)
    vecs, caches = [], []
    for tree in post.support:
        hv, cache = layers.compose_forward(tree, V, params)
        vecs.append(hv)
        caches.append(cache)
    return _Side(tokens, enc_cache, parser_cache, V, score_cache, scores, post, vecs, caches)


def forward_latent(sentence, params: ModelParams, config: LatentConfig | None = None) -> ForwardResult:
    """Class distribution ``sum_h q(h) p(y | h, x)`` over the sparse support."""
    config = config or LatentConfig()
    if params.config.task != "classify":
        raise ContractError("forward_latent needs a classify model")
    side = _run_side(sentence, params, config)
    per_tree, head_caches = [], []
    for hv in side.tree_vecs:
        p, hc = layers.classify_forward(hv, params)
        per_tree.append(p)
        head_caches.append(hc)
    q = side.posterior.q
    mix = np.sum([qi * p for qi, p in zip(q, per_tree)], axis=0)
    return ForwardResult(mix, side.posterior, per_tree, "classify", config, [side], head_caches, q.copy())


def expected_representation(sentence, params: ModelParams, config: LatentConfig | None = None) -> ForwardResult:
    """Expectation of unit-norm tree representations; the mean is not renormalized."""
    config = config or LatentConfig()
    if params.config.task != "revdict":
        raise ContractError("expected_representation needs a revdict model")
    side = _run_side(sentence, params, config)
    per_tree, head_caches = [], []
    for hv in side.tree_vecs:
        y, hc = layers.project_forward(hv, params)
        per_tree.append(y)
        head_caches.append(hc)
    q = side.posterior.q
    rbar = np.sum([qi * y for qi, y in zip(q, per_tree)], axis=0)
    return ForwardResult(rbar, side.posterior, per_tree, "revdict", config, [side], head_caches, q.copy())


def pair_forward(premise, hypothesis, params: ModelParams, config: LatentConfig | None = None) -> ForwardResult:
    """Double expectation over independent premise and hypothesis posteriors."""
    config = config or LatentConfig()
    if params.config.task != "pair":
        raise ContractError("pair_forward needs a pair model")
    a = _run_side(premise, params, config)
    b = _run_side(hypothesis, params, config)
    per_pair, head_caches, weights, index = [], [], [], []
    for i, (qa, va) in enumerate(zip(a.posterior.q, a.tree_vecs)):
        for j, (qb, vb) in enumerate(zip(b.posterior.q, b.tree_vecs)):
            p, hc = layers.pair_head_forward(va, vb, params)
            per_pair.append(p)
            head_caches.append(hc)
            weights.append(qa * qb)
            index.append((i, j))
    weights = np.array(weights)
    mix = np.sum([w * p for w, p in zip(weights, per_pair)], axis=0)
    return ForwardResult(
        mix, a.posterior, per_pair, "pair", config, [a, b], head_caches, weights,
        pair_index=index, posterior_b=b.posterior,
    )


def nll_loss(probs, label: int) -> float:
    p = float(probs[label])
    if p < PROB_FLOOR:
        warnings.warn(f"probability {p:g} of the gold label clamped to {PROB_FLOOR:g}", RuntimeWarning)
        p = PROB_FLOOR
    return -np.log(p)


def nll_grad(probs, label: int) -> np.ndarray:
    g = np.zeros(len(probs))
    g[label] = -1.0 / max(float(probs[label]), PROB_FLOOR)
    return g


def cosine_loss(rbar, target) -> float:
    rbar, target = np.asarray(rbar), np.asarray(target)
    return float(1.0 - rbar @ target / (np.linalg.norm(rbar) * np.linalg.norm(target)))


def cosine_grad(rbar, target) -> np.ndarray:
    rbar, target = np.asarray(rbar), np.asarray(target)
    nr, nt = np.linalg.norm(rbar), np.linalg.norm(target)
    cos = rbar @ target / (nr * nt)
    return -(target / (nr * nt) - cos * rbar / nr ** 2)


def _side_backward(side: _Side, dvecs, dscores, config: LatentConfig, params, tape):
    """Backprop one sentence: composition gradients per tree, then the parser.

    ``dscores`` is the gradient w.r.t. the temperature-scaled arc scores.
    """
    dV = np.zeros_like(side.V)
    for cache, dh in zip(side.tree_caches, dvecs):
        dV += layers.compose_backward(cache, dh, params, tape)
    if side.scores is not None and len(side.posterior.support) > 1:
        ds = dscores / config.temperature
        dVp = layers.score_arcs_backward(side.score_cache, ds, params, tape)
        if side.parser_enc_cache is None:
            dV += dVp
        else:
            layers.encode_backward(side.parser_enc_cache, dVp, params, tape)
    layers.encode_backward(side.enc_cache, dV, params, tape)


def backward_latent(fwd: ForwardResult, dout, params: ModelParams, tape: GradientTape | None = None) -> GradientTape:
    """Accumulate exact gradients of a loss whose gradient w.r.t. the output is ``dout``."""
    tape = tape if tape is not None else GradientTape.like(params)
    if tape.config != params.config:
        raise ContractError("gradient tape does not match the parameters")
    dout = np.asarray(dout, dtype=np.float64)
    if dout.shape != fwd.output.shape:
        raise ContractError(f"output gradient shape {dout.shape} != {fwd.output.shape}")

    if fwd.task in ("classify", "revdict"):
        side = fwd.sides[0]
        if len(fwd.per_tree) != len(side.posterior.support):
            raise ContractError("forward intermediates do not match the posterior")
        gscore, weights = expectation_backward(side.posterior, fwd.per_tree, dout)
        back = layers.classify_backward if fwd.task == "classify" else layers.project_backward
        dvecs = [back(hc, w * dout, params, tape) for hc, w in zip(fwd.head_caches, weights)]
        _side_backward(side, dvecs, gscore, fwd.config, params, tape)
        return tape

    a, b = fwd.sides
    da = [np.zeros_like(v) for v in a.tree_vecs]
    db = [np.zeros_like(v) for v in b.tree_vecs]
    gbar_a = np.zeros(len(a.tree_vecs))
    gbar_b = np.zeros(len(b.tree_vecs))
    qa, qb = a.posterior.q, b.posterior.q
    for (i, j), hc, w, p in zip(fwd.pair_index, fwd.head_caches, fwd.weights, fwd.per_tree):
        d1, d2 = layers.pair_head_backward(hc, w * dout, params, tape)
        da[i] += d1
        db[j] += d2
        val = dout @ p
        gbar_a[i] += qb[j] * val
        gbar_b[j] += qa[i] * val
    _side_backward(a, da, grad_scores(a.posterior, gbar_a), fwd.config, params, tape)
    _side_backward(b, db, grad_scores(b.posterior, gbar_b), fwd.config, params, tape)
    return tape
