import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from sparsetree.inference import (
    SolverConfig,
    marginal_posterior,
    objective,
    project_simplex,
    scale_temperature,
    sparsemap,
    sparsemap_brute,
)
from sparsetree.map_oracle import map_tree
from sparsetree.structures import (
    ArcScores,
    ContractError,
    DepTree,
    SizeLimitError,
    enumerate_trees,
    indicator_matrix,
    tree_indicator,
    tree_score,
)

from conftest import random_scores

seeds = st.integers(0, 2**32 - 1)


def dense_q(post, trees):
    return np.array([post.prob(t) for t in trees])


# -- marginal and temperature --------------------------------------------------

def test_marginal_zero_scores_uniform():
    post = marginal_posterior(ArcScores.zeros(2))
    assert_allclose(post.p, [1 / 3] * 3, atol=1e-15)
    assert marginal_posterior(ArcScores.zeros(1)).p.tolist() == [1.0]


def test_marginal_matches_enumeration(rng):
    s = random_scores(rng, 3, scale=3.0)
    f = np.array([tree_score(t, s) for t in enumerate_trees(3)])
    ref = np.exp(f) / np.exp(f).sum()
    post = marginal_posterior(s)
    assert_allclose(post.p, ref, rtol=0, atol=1e-12)
    assert np.all(post.p > 0) and abs(post.p.sum() - 1) <= 1e-12


def test_marginal_stable_for_large_scores(rng):
    post = marginal_posterior(random_scores(rng, 4, scale=500.0))
    assert np.all(np.isfinite(post.p)) and abs(post.p.sum() - 1) <= 1e-12


def test_marginal_size_limit():
    with pytest.raises(SizeLimitError):
        marginal_posterior(ArcScores.zeros(7))


def test_scale_temperature():
    s = ArcScores.from_arcs(2, {(0, 1): 4.0})
    assert_allclose(scale_temperature(s, 1.0).s, s.s)
    assert scale_temperature(s, 2.0)[(0, 1)] == 2.0
    for t in (0.0, -1.0):
        with pytest.raises(ContractError):
            scale_temperature(s, t)


def top_gap(s):
    f = sorted((tree_score(t, s) for t in enumerate_trees(s.n)), reverse=True)
    return f[0] - f[1]


def test_low_temperature_collapses_to_map():
    # generic: the two best trees differ by more than the quadratic term can bridge
    checked = 0
    for seed in range(40):
        s = random_scores(np.random.default_rng(seed), 4)
        if top_gap(s) < 2 * s.n * 1e-3:
            continue
        post = sparsemap(scale_temperature(s, 1e-3))
        assert post.support == [map_tree(s)]
        checked += 1
    assert checked >= 20


# -- sparsemap ---------------------------------------------------------------

def test_single_token_kkt():
    s = ArcScores(np.array([[0.7], [0.0]]))
    post = sparsemap(s)
    assert [t.heads for t in post.support] == [(0,)]
    assert post.q.tolist() == [1.0]
    assert post.u.tolist() == [1.0, 0.0]
    assert abs(post.tau - (0.7 - 1.0)) < 1e-9  # ridge on the Gram diagonal


def test_zero_scores_two_tokens():
    # The Gram matrix of the three trees is positive definite, so the optimum
    # is unique. The flat tree shares an arc with each of the others and drops out.
    trees = enumerate_trees(2)
    expected = np.array([0.0, 0.5, 0.5])
    post = sparsemap(ArcScores.zeros(2))
    assert_allclose(dense_q(post, trees), expected, atol=1e-9)
    brute = sparsemap_brute(ArcScores.zeros(2))
    assert_allclose(brute.p, expected, atol=1e-6)
    G = indicator_matrix(trees).T @ indicator_matrix(trees)
    assert np.all(np.linalg.eigvalsh(G) > 0)
    uniform = np.full(3, 1 / 3)
    assert objective(expected, indicator_matrix(trees), np.zeros(3)) > objective(uniform, indicator_matrix(trees), np.zeros(3))


@pytest.mark.parametrize("seed", range(10))
def test_large_scale_concentrates_on_map(seed):
    s = random_scores(np.random.default_rng(seed), 4)
    post = sparsemap(ArcScores(100.0 * s.s))
    assert post.prob(map_tree(s)) >= 1 - 1e-3


def test_map_limit_at_scale_1000(rng):
    for _ in range(10):
        s = random_scores(rng, 4)
        if top_gap(s) < 2 * s.n * 1e-3:
            continue
        post = sparsemap(ArcScores(1e3 * s.s))
        assert post.prob(map_tree(s)) >= 1 - 1e-6


def test_posterior_invariants(rng):
    for n in (2, 3, 4, 5, 6):
        for _ in range(10):
            post = sparsemap(random_scores(rng, n))
            assert post.converged
            assert np.all(post.q >= 0) and abs(post.q.sum() - 1) <= 1e-10
            assert len(post.support) <= n * n
            assert_allclose(post.u, post.M @ post.q, atol=1e-10)
            assert_allclose(post.Z, post.Z.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(post.Z) > 0)
            assert len({t.heads for t in post.support}) == len(post.support)


def test_exhaustive_kkt_certificate(rng):
    for n in (2, 3, 4):
        trees = enumerate_trees(n)
        M = indicator_matrix(trees)
        for _ in range(20):
            s = random_scores(rng, n)
            post = sparsemap(s)
            resid = M.T @ s.s.ravel() - M.T @ post.u
            assert resid.max() <= post.tau + 1e-8


@pytest.mark.parametrize("seed", range(50))
def test_same_optimum_as_brute(seed):
    s = random_scores(np.random.default_rng(seed), 3)
    post = sparsemap(s)
    brute = sparsemap_brute(s)
    trees = enumerate_trees(3)
    M = indicator_matrix(trees)
    f = M.T @ s.s.ravel()
    assert abs(objective(dense_q(post, trees), M, f) - objective(brute.p, M, f)) <= 1e-9
    assert_allclose(post.u, M @ brute.p, atol=1e-6)
    assert 1 <= len(post.support) <= 9


def test_optimal_q_need_not_be_unique():
    # Trees (0,0,0),(2,3,0) and (0,3,0),(2,0,0) use the same arcs in total,
    # so any mass moved between the two pairs leaves u and the objective fixed.
    a, b, c, d = (DepTree(h) for h in [(0, 0, 0), (2, 3, 0), (0, 3, 0), (2, 0, 0)])
    lhs = tree_indicator(a) + tree_indicator(b)
    rhs = tree_indicator(c) + tree_indicator(d)
    assert np.array_equal(lhs, rhs)
    s = ArcScores.from_arcs(3, {(0, 1): 1.0, (2, 1): 1.0, (0, 2): 1.0, (3, 2): 1.0, (0, 3): 2.0})
    post = sparsemap(s)
    brute = sparsemap_brute(s)
    trees = enumerate_trees(3)
    M = indicator_matrix(trees)
    assert_allclose(post.u, M @ brute.p, atol=1e-6)


def test_sparsity_realized_n3():
    sizes = [len(sparsemap(random_scores(np.random.default_rng(i), 3)).support) for i in range(100)]
    assert np.mean(np.array(sizes) < 16) >= 0.9


def test_iteration_cap_flags_non_convergence(rng):
    for _ in range(20):
        s = random_scores(rng, 5, scale=0.1)
        post = sparsemap(s, SolverConfig(max_iterations=1))
        if len(sparsemap(s).support) > 2:
            assert not post.converged
            assert abs(post.q.sum() - 1) <= 1e-10
            return
    pytest.fail("no instance needed more than one iteration")


def test_nan_scores_rejected():
    s = np.zeros((3, 2))
    s[2, 0] = np.inf
    with pytest.raises(ContractError):
        sparsemap(s)


def test_solver_config_positive():
    with pytest.raises(ContractError):
        SolverConfig(kkt_tol=0)


def test_brute_basics():
    assert sparsemap_brute(ArcScores.zeros(1)).p.tolist() == [1.0]
    with pytest.raises(SizeLimitError):
        sparsemap_brute(ArcScores.zeros(5))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), seeds, st.floats(-3, 3), st.integers(1, 4))
def test_modifier_shift_leaves_q(n, seed, c, mod):
    mod = min(mod, n)
    s = random_scores(np.random.default_rng(seed), n)
    shifted = s.s.copy()
    shifted[:, mod - 1] += c
    p1, p2 = sparsemap(s), sparsemap(ArcScores(shifted))
    assert p1.as_dict().keys() == p2.as_dict().keys()
    assert_allclose([p2.prob(t) for t in p1.support], p1.q, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), seeds, st.floats(0.05, 20))
def test_simplex_and_support_bound(n, seed, scale):
    post = sparsemap(random_scores(np.random.default_rng(seed), n, scale))
    assert np.all(post.q > 0) and abs(post.q.sum() - 1) <= 1e-10
    assert len(post.support) <= n * n


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_project_simplex(v):
    p = project_simplex(np.array(v))
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12
    # optimality: p - v is constant on the support and no smaller off it
    d = p - np.array(v)
    on = p > 0
    assert np.ptp(d[on]) <= 1e-9
    assert np.all(d[~on] >= d[on].max() - 1e-9)
