"""Data generation, training, evaluation and the command line."""

from .data import DataRecord, SyntheticSpec, gen_synthetic, read_jsonl, split, write_jsonl
from .evaluation import EvalReport, evaluate, evaluate_params, select_temperature
from .training import NumericalFailure, TrainConfig, TrainResult, lr_at, read_metrics, train
from .experiment import ExperimentConfig, run_experiment
from .gradcheck import GradcheckConfig, GradcheckReport, gradcheck
