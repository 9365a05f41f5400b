"""Command line: ``sparsetree {gen,train,eval,gradcheck,infer,experiment}``.

Settings are layered: built-in defaults, then the ``--config`` JSON file,
then flags given explicitly on the command line.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .._cholesky import NumericalError
from ..inference import SolverConfig, marginal_posterior, scale_temperature, sparsemap
from ..latent_model import ModelConfig, load_checkpoint
from ..structures import ArcScores, ContractError, SizeLimitError
from .data import SyntheticSpec, gen_synthetic, read_jsonl, split, write_jsonl
from .evaluation import evaluate, select_temperature
from .gradcheck import GradcheckConfig, gradcheck
from .training import NumericalFailure, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("sparsetree")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _overrides(args, names) -> dict:
    """Flags the user actually passed (their defaults are None)."""
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _out_dir(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path: Path | None = None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is not None:
        path.write_text(text + "\n")
    print(text)


# -- subcommands -------------------------------------------------------------

SPEC_FLAGS = ["task", "n_records", "n_min", "n_max", "vocab_size", "n_classes"]


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    spec_d = {**cfg.get("data", {}), **_overrides(args, SPEC_FLAGS)}
    spec = SyntheticSpec.from_dict(spec_d)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    n_valid = args.n_valid if args.n_valid is not None else cfg.get("n_valid", 0)
    records = gen_synthetic(spec, seed)
    out = _out_dir(args)
    if n_valid:
        tr, va = split(records, n_valid)
        write_jsonl(out / "train.jsonl", tr)
        write_jsonl(out / "valid.jsonl", va)
    else:
        write_jsonl(out / "data.jsonl", records)
    (out / "spec.json").write_text(json.dumps({"data": asdict(spec), "seed": seed, "n_valid": n_valid}, indent=2) + "\n")
    log.info("wrote %d records to %s", len(records), out)
    return EXIT_OK


TRAIN_FLAGS = ["batch_size", "lr", "lr_decay", "patience_epochs", "max_epochs", "structure", "task"]


def _train_config(args, cfg: dict) -> TrainConfig:
    d = {k: v for k, v in cfg.items() if k in TrainConfig.__dataclass_fields__}
    d.update(_overrides(args, TRAIN_FLAGS))
    if args.seed is not None:
        d["seed"] = args.seed
    if args.temperature_grid is not None:
        d["temperature_grid"] = args.temperature_grid
    model = dict(d.get("model") or asdict(TrainConfig().model))
    if args.vocab_size is not None:
        model["vocab_size"] = args.vocab_size
    if args.n_classes is not None:
        model["n_classes"] = args.n_classes
    d["model"] = ModelConfig.from_dict(model)
    return TrainConfig(**d)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    tc = _train_config(args, cfg)
    train_data, valid_data = read_jsonl(args.train), read_jsonl(args.valid)
    out = _out_dir(args)
    res = train(tc, train_data, valid_data, out_dir=out)
    t, reports = select_temperature(res.best_params, valid_data, tc.task, tc.temperature_grid, tc.latent_config())
    summary = {
        "best_valid_metric": res.best_metric,
        "epochs": len(res.metrics),
        "selected_temperature": t,
        "temperature_reports": [r.as_dict() for r in reports],
        "checkpoint": str(res.checkpoint),
        "metrics": str(res.metrics_path),
    }
    from .plotting import plot_training_curves

    summary["figure"] = str(plot_training_curves({tc.structure: res.metrics_path}, out / "training_curves.png"))
    _dump(summary, out / "train_summary.json")
    return EXIT_OK


def cmd_eval(args) -> int:
    records = read_jsonl(args.data)
    if args.temperature_grid:
        params, meta = load_checkpoint(args.checkpoint)
        tc = TrainConfig.from_dict(meta["train_config"])
        t, reports = select_temperature(params, records, params.config.task, args.temperature_grid, tc.latent_config())
        result = {"selected_temperature": t, "reports": [r.as_dict() for r in reports]}
    else:
        result = evaluate(args.checkpoint, records, temperature=args.temperature).as_dict()
    _dump(result, Path(args.out_dir) / "eval.json" if args.out_dir else None)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    d = _load_config(args.config).get("gradcheck", {})
    if args.seeds is not None:
        d["seeds"] = args.seeds
    if args.seed is not None:
        d["seeds"] = [args.seed]
    if args.jacobian_instances is not None:
        d["jacobian_instances"] = args.jacobian_instances
    if args.corrupt is not None:
        d["corrupt_block"] = args.corrupt
    report = gradcheck(GradcheckConfig.from_dict(d))
    for line in report.lines():
        print(line)
    if args.out_dir:
        (_out_dir(args) / "gradcheck.json").write_text(report.to_json() + "\n")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def _read_scores(path) -> ArcScores:
    try:
        obj = json.load(sys.stdin if path == "-" else open(path))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read scores: {exc}") from exc
    if not isinstance(obj, dict) or "scores" not in obj:
        raise UsageError('scores file must be an object {"n": int, "scores": [[...]]}')
    s = np.asarray(obj["scores"], dtype=np.float64)
    n = int(obj.get("n", s.shape[1] if s.ndim == 2 else 0))
    if s.shape != (n + 1, n):
        raise UsageError(f"scores must be (n + 1) x n = {(n + 1, n)}, got {s.shape}")
    return ArcScores(s)


def cmd_infer(args) -> int:
    scores = scale_temperature(_read_scores(args.scores), args.temperature)
    if args.marginal:
        post = marginal_posterior(scores)
        pairs = [(t, p) for t, p in zip(post.trees, post.p)]
    else:
        post = sparsemap(scores, SolverConfig())
        if not post.converged:
            raise NumericalError("sparsemap did not converge")
        pairs = list(zip(post.support, post.q))
    entries = [{"heads": list(t.heads), "prob": float(p)} for t, p in sorted(pairs, key=lambda x: -x[1])]
    print(json.dumps(entries))
    if args.plot:
        from .plotting import plot_posterior

        plot_posterior(entries, args.plot, title=f"n={scores.n}, t={args.temperature:g}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import STRUCTURES, ExperimentConfig, run_experiment

    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    tc = _train_config(args, cfg)
    exp = ExperimentConfig(seed=seed, train=replace(tc, seed=seed))
    if args.n_train is not None:
        exp.n_train = args.n_train
    if args.n_valid is not None:
        exp.n_valid = args.n_valid
    structures = args.structures or STRUCTURES
    out = _out_dir(args)
    results = run_experiment(exp, structures, out_dir=out)
    for s, r in results.items():
        print(f"{s:14s} acc {r.report.accuracy:.4f}  t={r.temperature:g}  "
              f"support {r.report.mean_support_size:.3f}  {r.seconds:.1f}s")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings; explicit flags win")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sparsetree", description="Sparse latent dependency trees.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic governor-task dataset")
    g.add_argument("--task", choices=["classify", "pair", "revdict"])
    g.add_argument("--n-records", type=int)
    g.add_argument("--n-min", type=int)
    g.add_argument("--n-max", type=int)
    g.add_argument("--vocab-size", type=int)
    g.add_argument("--n-classes", type=int)
    g.add_argument("--n-valid", type=int, help="hold out this many records as valid.jsonl")
    g.set_defaults(func=cmd_gen)

    def train_flags(q):
        q.add_argument("--structure", choices=["latent", "flat", "left_to_right"])
        q.add_argument("--task", choices=["classify", "pair", "revdict"])
        q.add_argument("--lr", type=float)
        q.add_argument("--lr-decay", type=float)
        q.add_argument("--batch-size", type=int)
        q.add_argument("--patience-epochs", type=int)
        q.add_argument("--max-epochs", type=int)
        q.add_argument("--temperature-grid", type=float, nargs="+")
        q.add_argument("--vocab-size", type=int)
        q.add_argument("--n-classes", type=int)

    t = sub.add_parser("train", parents=[common], help="train a model; writes checkpoint, metrics and curves")
    t.add_argument("--train", required=True, help="training JSONL")
    t.add_argument("--valid", required=True, help="validation JSONL")
    train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--temperature", type=float, default=1.0)
    e.add_argument("--temperature-grid", type=float, nargs="+", help="select t on this grid instead")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    c.add_argument("--seeds", type=int, nargs="+")
    c.add_argument("--jacobian-instances", type=int)
    c.add_argument("--corrupt", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("infer", parents=[common], help="posterior over trees for a JSON score table")
    i.add_argument("scores", help='JSON file {"n": int, "scores": [[...]]} or - for stdin')
    i.add_argument("--temperature", type=float, default=1.0)
    i.add_argument("--marginal", action="store_true", help="dense softmax posterior instead (n <= 6)")
    i.add_argument("--plot", help="also write a bar chart to this path")
    i.set_defaults(func=cmd_infer)

    x = sub.add_parser("experiment", parents=[common], help="latent model vs flat and left-to-right baselines")
    x.add_argument("--structures", nargs="+", choices=["latent", "flat", "left_to_right"])
    x.add_argument("--n-train", type=int)
    x.add_argument("--n-valid", type=int)
    train_flags(x)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalFailure, NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ContractError, SizeLimitError, FileNotFoundError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
