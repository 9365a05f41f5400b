import functools
import sys

import numpy as np
import pytest

import sparsetree.inference as _inference
from sparsetree.structures import ArcScores

# Every sparsemap call made anywhere in the suite goes through this wrapper,
# which checks the support bound and counts calls for the acceptance summary.
SUPPORT_AUDIT = {"calls": 0, "violations": 0, "max_ratio": 0.0}
ACCEPTANCE = {}

_original = _inference.sparsemap


@functools.wraps(_original)
def _audited_sparsemap(scores, *args, **kwargs):
    post = _original(scores, *args, **kwargs)
    n = post.n
    SUPPORT_AUDIT["calls"] += 1
    SUPPORT_AUDIT["max_ratio"] = max(SUPPORT_AUDIT["max_ratio"], len(post.support) / (n * n))
    if len(post.support) > n * n:
        SUPPORT_AUDIT["violations"] += 1
        raise AssertionError(f"support {len(post.support)} exceeds n^2 = {n * n}")
    return post


for _name, _mod in list(sys.modules.items()):
    if _name.startswith("sparsetree") and getattr(_mod, "sparsemap", None) is _original:
        _mod.sparsemap = _audited_sparsemap


def random_scores(rng, n, scale=1.0):
    return ArcScores(rng.normal(scale=scale, size=(n + 1, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    a = SUPPORT_AUDIT
    tr.write_line(f"support audit: {a['calls']} sparsemap calls, {a['violations']} above n^2, "
                  f"max |support|/n^2 = {a['max_ratio']:.3f}")
