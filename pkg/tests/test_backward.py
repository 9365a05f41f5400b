import numpy as np
import pytest
from numpy.testing import assert_allclose

from sparsetree._cholesky import NumericalError
from sparsetree.backward import expectation_backward, grad_scores, posterior_jacobian
from sparsetree.inference import SparsePosterior, sparsemap
from sparsetree.structures import ArcScores, ContractError, DepTree, legal_arc_mask

from conftest import random_scores

EPS = 1e-5


def key(post):
    return sorted(t.heads for t in post.support)


def smooth_instance(rng, n, min_support=2):
    """Random instance whose support survives +-EPS perturbation of every support tree."""
    for _ in range(200):
        s = random_scores(rng, n)
        post = sparsemap(s)
        if len(post.support) < min_support:
            continue
        if all(key(sparsemap(s, tree_bonus={t.heads: sg * EPS})) == key(post)
               for t in post.support for sg in (1, -1)):
            return s, post
    raise RuntimeError("no smooth instance found")


def test_singleton_jacobian_is_zero():
    s = ArcScores(100.0 * np.random.default_rng(0).normal(size=(4, 3)))
    post = sparsemap(s)
    assert len(post.support) == 1
    assert_allclose(posterior_jacobian(post).D, [[0.0]], atol=1e-15)
    assert np.all(grad_scores(post, [3.0]) == 0)


def test_symmetry_and_zero_sums(rng):
    for n in (2, 3, 4, 5):
        for _ in range(10):
            D = posterior_jacobian(sparsemap(random_scores(rng, n))).D
            assert_allclose(D, D.T, atol=1e-10)
            assert np.abs(D.sum(axis=0)).max() <= 1e-10
            assert np.abs(D.sum(axis=1)).max() <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_finite_differences(seed):
    s, post = smooth_instance(np.random.default_rng(seed), 3)
    D = posterior_jacobian(post).D
    for j, t in enumerate(post.support):
        qp = sparsemap(s, tree_bonus={t.heads: EPS})
        qm = sparsemap(s, tree_bonus={t.heads: -EPS})
        fd = np.array([(qp.prob(h) - qm.prob(h)) / (2 * EPS) for h in post.support])
        assert_allclose(fd, D[:, j], atol=1e-4 * max(1.0, np.abs(D).max()))


def test_directional_derivative(rng):
    s, post = smooth_instance(rng, 3)
    D = posterior_jacobian(post).D
    v = rng.normal(size=len(post.support))
    bonus = lambda sg: {t.heads: sg * EPS * vi for t, vi in zip(post.support, v)}
    qp, qm = sparsemap(s, tree_bonus=bonus(1)), sparsemap(s, tree_bonus=bonus(-1))
    fd = np.array([(qp.prob(h) - qm.prob(h)) / (2 * EPS) for h in post.support])
    assert_allclose(fd, D @ v, atol=1e-4 * np.abs(D @ v).max())


def test_constant_gbar_gives_zero(rng):
    post = sparsemap(random_scores(rng, 4, scale=0.3))
    assert len(post.support) > 1
    assert np.abs(grad_scores(post, np.full(len(post.support), 2.5))).max() <= 1e-10


def test_grad_scores_finite_differences(rng):
    s, post = smooth_instance(rng, 3)
    gbar = rng.normal(size=len(post.support))
    w = {t.heads: g for t, g in zip(post.support, gbar)}
    analytic = grad_scores(post, gbar)
    for idx in zip(*np.nonzero(legal_arc_mask(3))):
        vals = []
        for sg in (1, -1):
            s2 = s.s.copy()
            s2[idx] += sg * EPS
            p = sparsemap(ArcScores(s2))
            vals.append(sum(w.get(t.heads, 0.0) * q for t, q in zip(p.support, p.q)))
        fd = (vals[0] - vals[1]) / (2 * EPS)
        assert abs(fd - analytic[idx]) <= 1e-4 * max(1.0, np.abs(analytic).max())


def test_grad_scores_matches_dense_product(rng):
    for n in (2, 3, 4):
        post = sparsemap(random_scores(rng, n, scale=0.5))
        gbar = rng.normal(size=len(post.support))
        dense = (post.M @ (posterior_jacobian(post).D @ gbar)).reshape(n + 1, n)
        assert_allclose(grad_scores(post, gbar), dense, atol=1e-12)
        assert np.all(grad_scores(post, gbar)[~legal_arc_mask(n)] == 0)


def test_non_support_stays_zero(rng):
    s, post = smooth_instance(rng, 3)
    for _ in range(5):
        p = sparsemap(ArcScores(s.s + 1e-6 * rng.normal(size=s.s.shape)))
        assert key(p) == key(post)


def test_two_tree_closed_form():
    s = ArcScores.from_arcs(2, {(1, 2): 1.0, (2, 1): 1.0})
    post = sparsemap(s)
    assert sorted(t.heads for t in post.support) == [(0, 1), (2, 0)]
    assert_allclose(post.q, [0.5, 0.5], atol=1e-9)
    assert_allclose(post.Z, 0.5 * np.eye(2), atol=1e-9)
    D = posterior_jacobian(post).D
    assert_allclose(D, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-9)
    r = [np.array([1.0]) if t.heads == post.support[0].heads else np.array([0.0]) for t in post.support]
    g, weights = expectation_backward(post, r, np.array([1.0]))
    assert_allclose(weights, [0.5, 0.5])
    expected = grad_scores(post, [1.0, 0.0])
    assert_allclose(g, expected)
    first = post.support[0]
    assert abs(g[first.heads[0], 0] - 0.25) <= 1e-9  # arc into token 1 used by the first tree


def test_identical_values_zero_gradient(rng):
    post = sparsemap(random_scores(rng, 4, scale=0.3))
    g, w = expectation_backward(post, [np.array([2.0, -1.0])] * len(post.support), np.array([0.3, 0.7]))
    assert np.abs(g).max() <= 1e-10
    assert_allclose(w, post.q)


def test_contract_errors(rng):
    post = sparsemap(random_scores(rng, 3, scale=0.3))
    with pytest.raises(ContractError):
        grad_scores(post, np.ones(len(post.support) + 1))
    with pytest.raises(ContractError):
        expectation_backward(post, None, np.ones(1))
    bad = SparsePosterior([DepTree((0,))], np.ones(1), np.ones(2), -np.eye(1), 0.0, 1, n=1)
    with pytest.raises(NumericalError):
        posterior_jacobian(bad)
