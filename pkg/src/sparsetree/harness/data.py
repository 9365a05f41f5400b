"""Synthetic governor-task datasets and JSON-lines I/O.

Every sentence contains exactly one governor token (id 0). The token right
after it is the governor's argument and hangs under it in the generating
tree; every other token hangs off the root. Labels depend only on the
argument, so a model has to tell which token the governor governs:

* ``classify``: the class of the argument token.
* ``pair``: premise and hypothesis each have an argument; the label is
  ``(class_a - class_b) mod n_classes``.
* ``revdict``: the target is a fixed unit vector assigned to the argument
  token; ``label`` holds the argument's token id.

Content token ``t >= 1`` belongs to class ``(t - 1) % n_classes``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..structures import ContractError

GOVERNOR = 0


@dataclass(frozen=True)
class SyntheticSpec:
    task: str = "classify"
    n_records: int = 1000
    n_min: int = 3
    n_max: int = 6
    vocab_size: int = 16
    n_classes: int = 2
    class_weights: tuple[float, ...] | None = None
    d_target: int = 16

    def __post_init__(self):
        if self.task not in ("classify", "pair", "revdict"):
            raise ContractError(f"unknown task {self.task!r}")
        if not 2 <= self.n_min <= self.n_max:
            raise ContractError("need 2 <= n_min <= n_max")
        if self.n_records < 1 or self.n_classes < 1 or self.d_target < 1:
            raise ContractError("n_records, n_classes and d_target must be positive")
        if self.vocab_size - 1 < self.n_classes:
            raise ContractError("vocabulary too small: every class needs a content token")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=float)
            if len(w) != self.n_classes or np.any(w < 0) or w.sum() <= 0:
                raise ContractError("class_weights must be n_classes non-negative numbers")

    @property
    def weights(self) -> np.ndarray:
        if self.class_weights is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        w = np.asarray(self.class_weights, dtype=float)
        return w / w.sum()

    def token_class(self, token: int) -> int:
        return (token - 1) % self.n_classes

    def class_tokens(self, cls: int) -> np.ndarray:
        return np.arange(1 + cls, self.vocab_size, self.n_classes)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if d.get("class_weights") is not None:
            d["class_weights"] = tuple(d["class_weights"])
        return cls(**d)


@dataclass
class DataRecord:
    tokens: list[int]
    label: int | list[float]
    gold_heads: list[int] | None = None
    tokens_b: list[int] | None = None
    gold_heads_b: list[int] | None = None
    word: int | None = None  # revdict: the token whose vector is the target

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DataRecord":
        return cls(**d)

    def validate(self, vocab_size: int, n_classes: int | None = None):
        for seq, heads in ((self.tokens, self.gold_heads), (self.tokens_b, self.gold_heads_b)):
            if seq is None:
                continue
            if not seq or any(not 0 <= t < vocab_size for t in seq):
                raise ContractError("token ids out of range")
            if heads is not None and len(heads) != len(seq):
                raise ContractError("gold_heads length differs from tokens")
        if n_classes is not None and isinstance(self.label, int) and not 0 <= self.label < n_classes:
            raise ContractError(f"label {self.label} outside [0, {n_classes})")


def target_vectors(spec: SyntheticSpec, seed: int) -> np.ndarray:
    """Unit target vector for every token id (row 0, the governor, unused)."""
    rng = np.random.default_rng([seed, 7])
    T = rng.normal(size=(spec.vocab_size, spec.d_target))
    return T / np.linalg.norm(T, axis=1, keepdims=True)


def _sentence(spec: SyntheticSpec, rng: np.random.Generator, cls: int):
    n = int(rng.integers(spec.n_min, spec.n_max + 1))
    g = int(rng.integers(0, n - 1))  # governor position, never last
    tokens = list(rng.integers(1, spec.vocab_size, size=n))
    tokens[g] = GOVERNOR
    arg = int(rng.choice(spec.class_tokens(cls)))
    tokens[g + 1] = arg
    heads = [0] * n
    heads[g + 1] = g + 1  # 1-based head index of the governor
    return [int(t) for t in tokens], heads, arg


def gen_synthetic(spec: SyntheticSpec, seed: int) -> list[DataRecord]:
    rng = np.random.default_rng(seed)
    weights = spec.weights
    targets = target_vectors(spec, seed) if spec.task == "revdict" else None
    records = []
    for _ in range(spec.n_records):
        label = int(rng.choice(spec.n_classes, p=weights))
        if spec.task == "classify":
            tokens, heads, _ = _sentence(spec, rng, label)
            records.append(DataRecord(tokens, label, heads))
        elif spec.task == "pair":
            cls_a = int(rng.integers(spec.n_classes))
            cls_b = (cls_a - label) % spec.n_classes
            ta, ha, _ = _sentence(spec, rng, cls_a)
            tb, hb, _ = _sentence(spec, rng, cls_b)
            records.append(DataRecord(ta, label, ha, tokens_b=tb, gold_heads_b=hb))
        else:
            tokens, heads, arg = _sentence(spec, rng, label)
            records.append(DataRecord(tokens, [float(x) for x in targets[arg]], heads, word=arg))
    return records


def split(records: list, n_valid: int) -> tuple[list, list]:
    if not 0 < n_valid < len(records):
        raise ContractError("validation split must leave both parts non-empty")
    return records[:-n_valid], records[-n_valid:]


def write_jsonl(path, records) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    return path


def read_jsonl(path) -> list[DataRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(DataRecord.from_dict(json.loads(line)))
    return out
