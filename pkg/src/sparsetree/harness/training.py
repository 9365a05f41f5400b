"""Minibatch SGD with decay-on-plateau and early stopping."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .._cholesky import NumericalError
from ..inference import SolverConfig
from ..latent_model import (
    GradientTape,
    LatentConfig,
    ModelConfig,
    ModelParams,
    backward_latent,
    save_checkpoint,
)
from ..structures import ContractError
from .data import DataRecord
from .evaluation import evaluate_params, run_record

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "epoch", "lr", "train_loss", "valid_metric", "mean_support_size", "improved", "skipped",
]


# The parser gets a BiRNN so arc scores can see word order; the composer reads
# plain embeddings so order reaches it only through the tree.
DEFAULT_MODEL = ModelConfig(use_rnn=True, share_embeddings=False, composer_rnn=False)


class NumericalFailure(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 0.1
    lr_decay: float = 0.9
    patience_epochs: int = 5
    max_epochs: int = 30
    seed: int = 0
    temperature_grid: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    lr_grid: list[float] = field(default_factory=lambda: [1.0, 0.3, 0.1, 0.03, 0.01])
    task: str = "classify"
    structure: str = "latent"
    model: ModelConfig = field(default_factory=lambda: DEFAULT_MODEL)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)
        if self.model.task != self.task:
            self.model = replace(self.model, task=self.task)
        if self.batch_size < 1 or self.patience_epochs < 1 or self.max_epochs < 1:
            raise ContractError("batch_size, patience_epochs and max_epochs must be positive")
        if self.lr < 0 or not 0 < self.lr_decay <= 1:
            raise ContractError("need lr >= 0 and 0 < lr_decay <= 1")
        if not self.temperature_grid or min(self.temperature_grid) <= 0:
            raise ContractError("temperature_grid must be non-empty and positive")
        if self.structure not in ("latent", "flat", "left_to_right"):
            raise ContractError(f"unknown structure {self.structure!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def latent_config(self, temperature: float = 1.0) -> LatentConfig:
        return LatentConfig(temperature=temperature, structure=self.structure, solver=self.solver)


def lr_at(config: TrainConfig, non_improving: int) -> float:
    """Learning rate after ``non_improving`` epochs that did not beat the best."""
    return config.lr * config.lr_decay ** non_improving


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    metrics: list[dict]
    best_metric: float
    checkpoint: Path | None = None
    metrics_path: Path | None = None


def _format(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_metrics(path, rows: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_format(r[c]) for c in METRIC_COLUMNS])
    return path


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _dump_batch(out_dir, batch: list[DataRecord], epoch: int, loss: float):
    if out_dir is None:
        return None
    path = Path(out_dir) / "nan_batch.json"
    with open(path, "w") as fh:
        json.dump({"epoch": epoch, "loss": repr(loss), "records": [json.loads(r.to_json()) for r in batch]}, fh)
    return path


def train(
    config: TrainConfig,
    train_data: list[DataRecord],
    valid_data: list[DataRecord],
    out_dir=None,
    params: ModelParams | None = None,
    extra_meta: dict | None = None,
) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = ModelParams.init(config.model, np.random.default_rng([config.seed, 1]))
    params = params.copy()
    latent = config.latent_config()
    for r in train_data + valid_data:
        r.validate(config.model.vocab_size, config.model.n_classes if config.task != "revdict" else None)

    best_metric = -np.inf
    best_params = params.copy()
    non_improving = 0
    bad_streak = 0
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.max_epochs + 1):
        lr = lr_at(config, non_improving)
        order = rng.permutation(len(train_data))
        losses, skipped = [], 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_data[i] for i in order[start:start + config.batch_size]]
            tape = GradientTape.like(params)
            used, batch_loss = 0, 0.0
            for rec in batch:
                try:
                    res = run_record(rec, params, latent, config.task)
                except (NumericalError, FloatingPointError) as exc:
                    path = _dump_batch(out, batch, epoch, float("nan"))
                    raise NumericalFailure(f"{exc} in epoch {epoch}; batch dumped to {path}") from exc
                if not res.fwd.converged:
                    skipped += 1
                    logger.info("skipping record: solver did not converge")
                    continue
                if not np.isfinite(res.loss):
                    path = _dump_batch(out, batch, epoch, res.loss)
                    raise NumericalFailure(f"non-finite loss in epoch {epoch}; batch dumped to {path}")
                backward_latent(res.fwd, res.dloss, params, tape)
                batch_loss += res.loss
                used += 1
            if used == 0:
                continue
            losses.append(batch_loss / used)
            if lr > 0:
                for name, g in tape.arrays.items():
                    params.arrays[name] -= lr * g / used
            if not params.all_finite():
                path = _dump_batch(out, batch, epoch, float("nan"))
                raise NumericalFailure(f"non-finite parameters in epoch {epoch}; batch dumped to {path}")

        report = evaluate_params(params, valid_data, config.task, latent)
        metric = report.validation_metric
        improved = metric > best_metric
        if improved:
            best_metric = metric
            best_params = params.copy()
            bad_streak = 0
        else:
            non_improving += 1
            bad_streak += 1
        rows.append({
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "valid_metric": metric,
            "mean_support_size": report.mean_support_size,
            "improved": int(improved),
            "skipped": skipped,
        })
        logger.info("epoch %d lr %.4g loss %.4f valid %.4f", epoch, lr, rows[-1]["train_loss"], metric)
        if bad_streak >= config.patience_epochs:
            break

    result = TrainResult(params, best_params, rows, best_metric)
    if out is not None:
        meta = {"train_config": config.to_dict(), "best_valid_metric": best_metric}
        meta.update(extra_meta or {})
        result.checkpoint = save_checkpoint(out / "checkpoint.npz", best_params, meta)
        result.metrics_path = write_metrics(out / "metrics.csv", rows)
    return result
