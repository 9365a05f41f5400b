"""Model configuration, parameter containers and checkpoint files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..structures import ContractError

CHECKPOINT_FORMAT_VERSION = 1
TASKS = ("classify", "pair", "revdict")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    d_emb: int = 16
    d_scorer: int = 16
    d_lstm: int = 16
    n_classes: int = 2
    task: str = "classify"
    d_pair: int = 16  # hidden tanh layer of the pair classifier
    d_out: int = 16  # target dimension for revdict
    use_rnn: bool = False
    d_rnn: int = 8
    share_embeddings: bool = True
    composer_rnn: bool = True  # only consulted when embeddings are not shared
    init_scale: float = 0.3
    arc_init_scale: float = 1.0  # std of the final arc-scorer weights; larger means sparser early posteriors

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                raise ContractError(f"{f.name} must be positive")

    @property
    def parser_rnn(self) -> bool:
        return self.use_rnn

    @property
    def composer_has_rnn(self) -> bool:
        return self.use_rnn and (self.share_embeddings or self.composer_rnn)

    @property
    def d_vec_parser(self) -> int:
        """Width of the token vectors fed to the arc scorer."""
        return 2 * self.d_rnn if self.parser_rnn else self.d_emb

    @property
    def d_vec(self) -> int:
        """Width of the token vectors fed to the tree LSTM."""
        return 2 * self.d_rnn if self.composer_has_rnn else self.d_emb

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _encoder_shapes(cfg: ModelConfig, prefix: str, rnn: bool) -> dict[str, tuple]:
    shapes = {prefix + "emb": (cfg.vocab_size, cfg.d_emb)}
    if rnn:
        for side in ("fw", "bw"):
            shapes[f"{prefix}rnn_{side}_Wx"] = (cfg.d_rnn, cfg.d_emb)
            shapes[f"{prefix}rnn_{side}_Wh"] = (cfg.d_rnn, cfg.d_rnn)
            shapes[f"{prefix}rnn_{side}_b"] = (cfg.d_rnn,)
    return shapes


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    dv, dp, dh, dl = cfg.d_vec, cfg.d_vec_parser, cfg.d_scorer, cfg.d_lstm
    shapes = _encoder_shapes(cfg, "", cfg.composer_has_rnn)
    if not cfg.share_embeddings:
        shapes.update(_encoder_shapes(cfg, "parser_", cfg.parser_rnn))
    shapes.update({
        "arc_root": (dp,),
        "arc_W_head": (dh, dp),
        "arc_W_mod": (dh, dp),
        "arc_b1": (dh,),
        "arc_w2": (dh,),
        "arc_b2": (1,),
        "lstm_root_x": (dv,),
    })
    for gate in "ifou":
        shapes[f"lstm_W_{gate}"] = (dl, dv)
        shapes[f"lstm_U_{gate}"] = (dl, dl)
        shapes[f"lstm_b_{gate}"] = (dl,)
    if cfg.task == "classify":
        shapes["out_W"] = (cfg.n_classes, dl)
        shapes["out_b"] = (cfg.n_classes,)
    elif cfg.task == "pair":
        shapes["pair_W"] = (cfg.d_pair, 4 * dl)
        shapes["pair_b"] = (cfg.d_pair,)
        shapes["out_W"] = (cfg.n_classes, cfg.d_pair)
        shapes["out_b"] = (cfg.n_classes,)
    else:
        shapes["proj_W"] = (cfg.d_out, dl)
        shapes["proj_b"] = (cfg.d_out,)
    return shapes


class ModelParams:
    """Named float64 arrays. Scorer/encoder weights are the parser side, the
    rest the composition side; embeddings are shared unless configured apart."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        expected = param_shapes(config)
        if set(arrays) != set(expected):
            raise ContractError(f"parameter names {sorted(arrays)} != {sorted(expected)}")
        self.arrays = {}
        for name, shape in expected.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != shape:
                raise ContractError(f"{name}: shape {a.shape} != {shape}")
            self.arrays[name] = a

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        arrays = {}
        for name, shape in param_shapes(config).items():
            if name.endswith("emb"):
                arrays[name] = rng.normal(0.0, 1.0, size=shape)
            elif len(shape) == 2:
                arrays[name] = rng.normal(0.0, config.init_scale / np.sqrt(shape[1]), size=shape) * np.sqrt(2)
            elif name == "arc_w2":
                arrays[name] = rng.normal(0.0, config.arc_init_scale, size=shape)
            elif name in ("arc_root", "lstm_root_x"):
                arrays[name] = rng.normal(0.0, config.init_scale, size=shape)
            else:
                arrays[name] = np.zeros(shape)
        return cls(config, arrays)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(config, {k: np.zeros(s) for k, s in param_shapes(config).items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


class GradientTape(ModelParams):
    """Parameter-shaped gradient accumulators."""

    @classmethod
    def like(cls, params: ModelParams) -> "GradientTape":
        return cls(params.config, {k: np.zeros_like(v) for k, v in params.arrays.items()})

    def zero(self):
        for a in self.arrays.values():
            a[...] = 0.0

    def add(self, name: str, value):
        self.arrays[name] += value

    def add_tape(self, other: "GradientTape", scale: float = 1.0):
        for k, v in other.arrays.items():
            self.arrays[k] += scale * v

    def scale(self, c: float):
        for a in self.arrays.values():
            a *= c


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> Path:
    """Write an ``.npz`` with every named tensor plus a JSON header."""
    path = Path(path)
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(params.config),
        "tensors": {k: list(v.shape) for k, v in params.arrays.items()},
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **params.arrays)
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ContractError(f"unsupported checkpoint version {meta.get('format_version')}")
        config = ModelConfig.from_dict(meta["model_config"])
        arrays = {k: data[k].copy() for k in meta["tensors"]}
    for k, shape in meta["tensors"].items():
        if list(arrays[k].shape) != shape:
            raise ContractError(f"checkpoint tensor {k} has inconsistent shape")
    return ModelParams(config, arrays), meta.get("extra", {})
