"""Sentences, arcs, dependency trees and their indicator vectors.

Arc scores for a sentence of ``n`` tokens live in a dense ``(n + 1, n)``
table: row ``h`` is the head (0 is the root symbol), column ``m - 1`` is the
modifier ``m``. The ``n`` self-arc slots ``(m, m - 1)`` exist in the table but
are never read and are always zero in indicator vectors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

MAX_ENUM_N = 6


class SizeLimitError(ValueError):
    """Raised when an exhaustive routine is asked for too large a sentence."""


class ContractError(ValueError):
    """Raised when an argument violates an operation's precondition."""


@dataclass(frozen=True)
class Sentence:
    token_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        if len(self.token_ids) < 1:
            raise ContractError("a sentence needs at least one token")

    @property
    def n(self) -> int:
        return len(self.token_ids)

    def check_vocab(self, vocab_size: int) -> None:
        for t in self.token_ids:
            if not 0 <= t < vocab_size:
                raise ContractError(f"token id {t} outside vocabulary of size {vocab_size}")


@dataclass(frozen=True)
class Arc:
    head: int
    modifier: int

    def __post_init__(self):
        if self.head < 0 or self.modifier < 1 or self.head == self.modifier:
            raise ContractError(f"illegal arc {self.head}->{self.modifier}")


@dataclass(frozen=True, order=True)
class DepTree:
    """A rooted arborescence stored as a head vector.

    ``heads[i]`` is the head of token ``i + 1``; head 0 is the root.
    """

    heads: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if not is_valid_tree(self.heads):
            raise ContractError(f"not a valid dependency tree: {list(self.heads)}")

    @property
    def n(self) -> int:
        return len(self.heads)

    def arcs(self) -> list[Arc]:
        return [Arc(h, m) for m, h in enumerate(self.heads, start=1)]

    def children(self) -> list[list[int]]:
        """Children of every node 0..n, in increasing order."""
        kids: list[list[int]] = [[] for _ in range(self.n + 1)]
        for m, h in enumerate(self.heads, start=1):
            kids[h].append(m)
        return kids

    def __repr__(self):
        return f"DepTree({list(self.heads)})"


@dataclass
class ArcScores:
    """Dense arc scores; ``s[h, m - 1]`` scores the arc ``h -> m``."""

    s: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1] + 1 or s.shape[1] < 1:
            raise ContractError(f"arc score table must be (n+1, n), got {s.shape}")
        self.n = s.shape[1]
        # self-arc slots are never read; zero them so they cannot leak NaNs
        s[self_arc_index(self.n)] = 0.0
        if not np.all(np.isfinite(s)):
            raise ContractError("arc scores must be finite")
        self.s = s

    @classmethod
    def zeros(cls, n: int) -> "ArcScores":
        return cls(np.zeros((n + 1, n)))

    @classmethod
    def from_arcs(cls, n: int, values: dict[tuple[int, int], float]) -> "ArcScores":
        s = np.zeros((n + 1, n))
        for (h, m), v in values.items():
            Arc(h, m)
            s[h, m - 1] = v
        return cls(s)

    def __getitem__(self, arc: tuple[int, int]) -> float:
        h, m = arc
        return float(self.s[h, m - 1])


def self_arc_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    m = np.arange(1, n + 1)
    return m, m - 1


def legal_arc_mask(n: int) -> np.ndarray:
    mask = np.ones((n + 1, n), dtype=bool)
    mask[self_arc_index(n)] = False
    return mask


def num_arcs(n: int) -> int:
    """Number of legal arcs, n * (n + 1) - n."""
    return n * n


def is_valid_tree(heads) -> bool:
    try:
        heads = [int(h) for h in heads]
    except (TypeError, ValueError):
        return False
    n = len(heads)
    if n < 1:
        return False
    for m, h in enumerate(heads, start=1):
        if not 0 <= h <= n or h == m:
            return False
    # walk up from every token; a valid tree reaches 0 within n steps
    for m in range(1, n + 1):
        node, steps = m, 0
        while node != 0:
            node = heads[node - 1]
            steps += 1
            if steps > n:
                return False
    return True


def enumerate_trees(n: int) -> list[DepTree]:
    """All arborescences over ``n`` tokens in lexicographic head-vector order."""
    if not 1 <= n <= MAX_ENUM_N:
        raise SizeLimitError(f"enumeration supports 1 <= n <= {MAX_ENUM_N}, got {n}")
    return _enumerate_cached(n)


_ENUM_CACHE: dict[int, list[DepTree]] = {}


def _enumerate_cached(n: int) -> list[DepTree]:
    if n not in _ENUM_CACHE:
        choices = [[h for h in range(n + 1) if h != m] for m in range(1, n + 1)]
        _ENUM_CACHE[n] = [
            DepTree(hv) for hv in itertools.product(*choices) if is_valid_tree(hv)
        ]
    return list(_ENUM_CACHE[n])


def tree_indicator(tree: DepTree) -> np.ndarray:
    """Binary ``(n + 1, n)`` table with a one for every arc of the tree."""
    if not isinstance(tree, DepTree):
        tree = DepTree(tree)
    n = tree.n
    bits = np.zeros((n + 1, n))
    bits[list(tree.heads), np.arange(n)] = 1.0
    return bits


def indicator_matrix(trees) -> np.ndarray:
    """Stack flattened indicators as columns: shape ``((n + 1) * n, len(trees))``."""
    return np.stack([tree_indicator(t).ravel() for t in trees], axis=1)


def tree_score(tree: DepTree, scores: ArcScores) -> float:
    if tree.n != scores.n:
        raise ContractError(f"tree has {tree.n} tokens, scores have {scores.n}")
    return float(sum(scores.s[h, m] for m, h in enumerate(tree.heads)))


def flat_tree(n: int) -> DepTree:
    return DepTree([0] * n)


def left_to_right_tree(n: int) -> DepTree:
    """Chain where the head of word i is word i + 1 and the last word hangs off the root."""
    return DepTree(list(range(2, n + 1)) + [0])
