"""Maximum-weight rooted arborescence (MAP inference over dependency trees)."""

from __future__ import annotations

import numpy as np

from .structures import (
    MAX_ENUM_N,
    ArcScores,
    ContractError,
    DepTree,
    SizeLimitError,
    enumerate_trees,
    tree_score,
)

NEG_INF = -np.inf
# scores closer than this (relative) are treated as tied
TIE_RTOL = 1e-12


def _tied(a: float, b: float) -> bool:
    return abs(a - b) <= TIE_RTOL * (1.0 + max(abs(a), abs(b)))


def _find_cycle(best: list[int]) -> list[int] | None:
    """Return the nodes of some cycle in the parent graph ``best`` (node 0 is the root)."""
    color = [0] * len(best)
    color[0] = 2
    for start in range(1, len(best)):
        path = []
        node = start
        while color[node] == 0:
            color[node] = 1
            path.append(node)
            node = best[node]
        if color[node] == 1:
            return path[path.index(node):]
        for p in path:
            color[p] = 2
    return None


def _argmax(values: list[float]) -> tuple[int, float, bool]:
    """Index of the first maximum, the maximum, and whether it is tied."""
    top = max(values)
    if top == NEG_INF:
        return -1, NEG_INF, False
    threshold = top - TIE_RTOL * (1.0 + abs(top))
    tied = sum(1 for v in values if v >= threshold) > 1
    return values.index(top), top, tied


def _chu_liu_edmonds(W: list[list[float]], flags: dict) -> list[int]:
    """Recursive contraction on a dense weight matrix.

    ``W[u][v]`` is the weight of edge u -> v over nodes 0..k-1 with node 0 the
    root; unusable edges are ``-inf``. Returns the parent of every node
    (``parent[0] = -1``). Sets ``flags["tie"]`` when any selection was tied.
    Plain lists: for sentence-sized graphs this beats array overhead.
    """
    k = len(W)
    best = [-1] * k
    for v in range(1, k):
        u, top, tied = _argmax([W[u][v] for u in range(k)])
        if u < 0:
            raise ContractError("no feasible arborescence under the given arc mask")
        best[v] = u
        flags["tie"] = flags["tie"] or tied

    cycle = _find_cycle(best)
    if cycle is None:
        return best

    in_cycle = set(cycle)
    outside = [i for i in range(k) if i not in in_cycle]
    c = len(outside)  # index of the contracted node
    cycle_in = {v: W[best[v]][v] for v in cycle}

    W2 = [[NEG_INF] * (c + 1) for _ in range(c + 1)]
    enter_via = [0] * c
    leave_from = [0] * c
    for a, u in enumerate(outside):
        row = W[u]
        for b, v in enumerate(outside):
            if a != b and b != 0:
                W2[a][b] = row[v]
        # entering the cycle: gain relative to the cycle edge being replaced
        j, top, tied = _argmax([row[v] - cycle_in[v] for v in cycle])
        if j >= 0:
            W2[a][c] = top
            enter_via[a] = cycle[j]
            flags["tie"] = flags["tie"] or tied
    for b in range(1, c):
        v = outside[b]
        j, top, tied = _argmax([W[u][v] for u in cycle])
        if j >= 0:
            W2[c][b] = top
            leave_from[b] = cycle[j]
            flags["tie"] = flags["tie"] or tied

    sub = _chu_liu_edmonds(W2, flags)

    parent = list(best)
    for b in range(1, c):
        p = sub[b]
        parent[outside[b]] = leave_from[b] if p == c else outside[p]
    a = sub[c]
    parent[enter_via[a]] = outside[a]
    return parent


def _solve(s: np.ndarray, flags: dict) -> tuple[int, ...]:
    n = s.shape[1]
    rows = s.tolist()
    W = [[NEG_INF] + rows[u] for u in range(n + 1)]
    for m in range(1, n + 1):
        W[m][m] = NEG_INF
    parent = _chu_liu_edmonds(W, flags)
    return tuple(parent[1:])


def _masked_score(heads, s: np.ndarray) -> float:
    return float(sum(s[h, m] for m, h in enumerate(heads)))


def map_tree(scores: ArcScores) -> DepTree:
    """Highest-scoring tree; ties go to the lexicographically smallest head vector."""
    s = np.asarray(scores.s if isinstance(scores, ArcScores) else scores, dtype=np.float64)
    if np.any(np.isnan(s)):
        raise ContractError("NaN arc scores")
    n = s.shape[1]
    if n == 1:
        return DepTree((0,))
    flags = {"tie": False}
    heads = _solve(s, flags)
    if not flags["tie"]:
        return DepTree(heads)

    # Ties: fix modifiers left to right, each to the smallest head that still
    # admits an optimal tree.
    best = _masked_score(heads, s)
    work = s.copy()
    for m in range(n):
        for h in range(n + 1):
            if h == m + 1 or not np.isfinite(work[h, m]):
                continue
            trial = work.copy()
            trial[:, m] = NEG_INF
            trial[h, m] = work[h, m]
            try:
                cand = _solve(trial, {"tie": True})
            except ContractError:
                continue
            if _tied(_masked_score(cand, s), best) or _masked_score(cand, s) > best:
                work = trial
                break
    final = _solve(work, {"tie": True})
    return DepTree(final)


def map_brute(scores: ArcScores) -> DepTree:
    """Exhaustive argmax with the same tie rule as :func:`map_tree`."""
    if scores.n > MAX_ENUM_N:
        raise SizeLimitError(f"brute-force MAP supports n <= {MAX_ENUM_N}")
    trees = enumerate_trees(scores.n)
    values = [tree_score(t, scores) for t in trees]
    top = max(values)
    for t, v in zip(trees, values):
        if _tied(v, top):
            return t
    raise AssertionError("unreachable")
