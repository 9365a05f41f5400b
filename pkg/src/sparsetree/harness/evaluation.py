"""Accuracy and posterior diagnostics for trained models."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..latent_model import (
    LatentConfig,
    ModelParams,
    cosine_grad,
    cosine_loss,
    expected_representation,
    flat_tree,
    forward_latent,
    load_checkpoint,
    nll_grad,
    nll_loss,
    pair_forward,
)
from ..latent_model.model import ForwardResult
from ..structures import ContractError, DepTree, tree_indicator
from .data import DataRecord


@dataclass
class RecordResult:
    fwd: ForwardResult
    loss: float
    dloss: np.ndarray


def run_record(rec: DataRecord, params: ModelParams, latent: LatentConfig, task: str) -> RecordResult:
    if task == "classify":
        fwd = forward_latent(rec.tokens, params, latent)
        return RecordResult(fwd, nll_loss(fwd.output, rec.label), nll_grad(fwd.output, rec.label))
    if task == "pair":
        fwd = pair_forward(rec.tokens, rec.tokens_b, params, latent)
        return RecordResult(fwd, nll_loss(fwd.output, rec.label), nll_grad(fwd.output, rec.label))
    if task == "revdict":
        fwd = expected_representation(rec.tokens, params, latent)
        target = np.asarray(rec.label, dtype=np.float64)
        return RecordResult(fwd, cosine_loss(fwd.output, target), cosine_grad(fwd.output, target))
    raise ContractError(f"unknown task {task!r}")


@dataclass
class EvalReport:
    accuracy: float
    mean_support_size: float
    flat_tree_probability: float
    reference_arc_probability: float
    temperature: float
    n_records: int = 0
    mean_cosine: float | None = None
    median_rank: float | None = None

    @property
    def validation_metric(self) -> float:
        """Accuracy for classification tasks, mean cosine for revdict."""
        return self.mean_cosine if self.mean_cosine is not None else self.accuracy

    def as_dict(self) -> dict:
        return asdict(self)


def _posterior_stats(post, gold_heads):
    n = post.n
    flat = flat_tree(n)
    flat_p = post.prob(flat)
    gold_p = None
    if gold_heads is not None:
        gold = tree_indicator(DepTree(gold_heads)).ravel()
        gold_p = float(post.u @ gold) / n
    return len(post.support), flat_p, gold_p


def evaluate_params(
    params: ModelParams,
    records: list[DataRecord],
    task: str,
    latent: LatentConfig | None = None,
    candidates: np.ndarray | None = None,
) -> EvalReport:
    """Evaluate in memory. For revdict, ``candidates`` are the vectors ranked
    against the prediction (default: the distinct targets in ``records``)."""
    latent = latent or LatentConfig()
    if not records:
        raise ContractError("cannot evaluate an empty dataset")
    correct, cosines, ranks = [], [], []
    supports, flats, golds = [], [], []

    if task == "revdict" and candidates is None:
        candidates = np.unique(np.array([r.label for r in records], dtype=np.float64), axis=0)

    for rec in records:
        res = run_record(rec, params, latent, task)
        out = res.fwd.output
        if task == "revdict":
            target = np.asarray(rec.label, dtype=np.float64)
            cosines.append(1.0 - res.loss)
            sims = candidates @ out / (np.linalg.norm(candidates, axis=1) * np.linalg.norm(out))
            own = float(target @ out / (np.linalg.norm(target) * np.linalg.norm(out)))
            rank = 1 + int(np.sum(sims > own + 1e-12))
            ranks.append(rank)
            correct.append(rank == 1)
        else:
            correct.append(int(np.argmax(out)) == rec.label)
        sides = [(res.fwd.sides[0].posterior, rec.gold_heads)]
        if task == "pair":
            sides.append((res.fwd.sides[1].posterior, rec.gold_heads_b))
        for post, gh in sides:
            size, flat_p, gold_p = _posterior_stats(post, gh)
            supports.append(size)
            flats.append(flat_p)
            if gold_p is not None:
                golds.append(gold_p)

    return EvalReport(
        accuracy=float(np.mean(correct)),
        mean_support_size=float(np.mean(supports)),
        flat_tree_probability=float(np.clip(np.mean(flats), 0.0, 1.0)),
        reference_arc_probability=float(np.clip(np.mean(golds), 0.0, 1.0)) if golds else float("nan"),
        temperature=latent.temperature,
        n_records=len(records),
        mean_cosine=float(np.mean(cosines)) if cosines else None,
        median_rank=float(np.median(ranks)) if ranks else None,
    )


def evaluate(checkpoint, records: list[DataRecord], temperature: float = 1.0, structure=None) -> EvalReport:
    """Load a checkpoint and evaluate it at the given temperature."""
    params, meta = load_checkpoint(Path(checkpoint))
    cfg = params.config
    for r in records:
        r.validate(cfg.vocab_size, cfg.n_classes if cfg.task != "revdict" else None)
    train_cfg = meta.get("train_config", {})
    structure = structure or train_cfg.get("structure", "latent")
    solver = train_cfg.get("solver")
    from ..inference import SolverConfig

    latent = LatentConfig(
        temperature=temperature,
        structure=structure,
        solver=SolverConfig(**solver) if solver else SolverConfig(),
    )
    return evaluate_params(params, records, cfg.task, latent)


def select_temperature(
    params: ModelParams,
    records: list[DataRecord],
    task: str,
    grid,
    base: LatentConfig | None = None,
) -> tuple[float, list[EvalReport]]:
    """Best validation temperature on ``grid``; ties go to the smallest t."""
    base = base or LatentConfig()
    reports = []
    for t in sorted(float(x) for x in grid):
        latent = LatentConfig(temperature=t, structure=base.structure, solver=base.solver)
        reports.append(evaluate_params(params, records, task, latent))
    best = max(range(len(reports)), key=lambda i: (reports[i].validation_metric, -i))
    return reports[best].temperature, reports
