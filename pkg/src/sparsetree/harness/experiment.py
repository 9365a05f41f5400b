"""Scaled-down comparison of the latent model with fixed-structure baselines."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .data import SyntheticSpec, gen_synthetic, split, write_jsonl
from .evaluation import EvalReport, select_temperature
from .training import TrainConfig, train

STRUCTURES = ("flat", "left_to_right", "latent")


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_train: int = 2000
    n_valid: int = 500
    data: SyntheticSpec = SyntheticSpec()
    train: TrainConfig = None

    def __post_init__(self):
        if self.train is None:
            self.train = TrainConfig(seed=self.seed, task=self.data.task)


@dataclass
class RunSummary:
    structure: str
    seconds: float
    epochs: int
    best_train_metric: float
    temperature: float
    report: EvalReport

    def as_dict(self) -> dict:
        return {
            "structure": self.structure,
            "seconds": self.seconds,
            "epochs": self.epochs,
            "best_train_metric": self.best_train_metric,
            "temperature": self.temperature,
            **{f"valid_{k}": v for k, v in self.report.as_dict().items()},
        }


def run_experiment(cfg: ExperimentConfig | None = None, structures=STRUCTURES, out_dir=None) -> dict[str, RunSummary]:
    cfg = cfg or ExperimentConfig()
    spec = replace(cfg.data, n_records=cfg.n_train + cfg.n_valid)
    train_data, valid_data = split(gen_synthetic(spec, cfg.seed), cfg.n_valid)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / "train.jsonl", train_data)
        write_jsonl(out / "valid.jsonl", valid_data)

    results = {}
    for structure in structures:
        tc = replace(cfg.train, structure=structure)
        run_dir = out / structure if out is not None else None
        start = time.perf_counter()
        res = train(tc, train_data, valid_data, out_dir=run_dir)
        t, reports = select_temperature(res.best_params, valid_data, tc.task, tc.temperature_grid, tc.latent_config())
        elapsed = time.perf_counter() - start
        report = next(r for r in reports if r.temperature == t)
        results[structure] = RunSummary(structure, elapsed, len(res.metrics), res.best_metric, t, report)

    if out is not None:
        from .plotting import plot_training_curves

        rows = [r.as_dict() for r in results.values()]
        with open(out / "summary.json", "w") as fh:
            json.dump(rows, fh, indent=2)
        plot_training_curves({s: out / s / "metrics.csv" for s in results}, out / "training_curves.png")
    return results
