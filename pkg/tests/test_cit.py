import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tailor import cit
from tailor.cit import (
    CitConfig,
    Covariate,
    CovariateSchema,
    Decision,
    Leaf,
    UnseenLevelError,
    best_split,
    covariate_transform,
    grow_tree_arrays,
    influence_matrix,
    iter_decisions,
    iter_leaves,
    linear_statistic,
    p_value,
    predict_distribution,
    select_covariate,
    standardized_statistic,
)
from tailor.model_io import dumps
from tailor.recommender import RecommenderModel
from tailor.survey import ELEMENTS, N_ELEMENTS
from tailor.synthetic import random_tree, survey_schema


def one_hot(codes, k):
    out = np.zeros((len(codes), k))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def small_schema(levels=("a", "b", "c"), numeric=True):
    covs = [Covariate("x", "nominal", levels)]
    if numeric:
        covs.append(Covariate("z", "numeric"))
    return CovariateSchema(tuple(covs))


def tree_bytes(tree, schema):
    meta = {"trained_at": "t", "config": CitConfig().to_dict(), "n_records": 0,
            "n_observations": [0, 0, 0], "policy": "error", "lat_ordinal": False}
    return dumps(RecommenderModel((tree, tree, tree), schema, meta))


# -- encodings ----------------------------------------------------------------


def test_influence_matrix_unit_vectors():
    H = influence_matrix(["Acknowledgment", "Time Pressure"])
    assert H[0, 0] == 1 and H[0].sum() == 1
    assert H[1, 20] == 1 and H[1].sum() == 1
    sums = influence_matrix(["Chance", "Chance", "Point"]).sum(axis=0)
    assert sums[1] == 2 and sums[10] == 1 and sums.sum() == 3


def test_covariate_transforms():
    schema = survey_schema()
    j = schema.index("preferred_setting")
    assert covariate_transform(schema, j, [{"preferred_setting": "Singleplayer"}]).tolist() == [[1.0, 0.0]]
    a = schema.index("age")
    assert covariate_transform(schema, a, [{"age": 29}]).tolist() == [[29.0]]
    ages = [{"age": v} for v in (18, 24, 24, 39)]
    assert covariate_transform(schema, a, ages, rank_numeric=True).ravel().tolist() == [1, 2.5, 2.5, 4]


# -- conditional moments ------------------------------------------------------


def _permutation_moments(G, H):
    """Mean and covariance of T over all n! response permutations (exact)."""
    Ts = np.array([(G.T @ H[list(p)]).ravel() for p in itertools.permutations(range(len(H)))])
    return Ts.mean(axis=0), np.cov(Ts, rowvar=False, bias=True)


@pytest.mark.parametrize("seed", range(4))
def test_moments_match_exhaustive_permutations(seed):
    rng = np.random.default_rng(seed)
    n = 6
    G = np.column_stack([one_hot(rng.integers(0, 2, n), 2), rng.normal(size=n)])
    H = one_hot(rng.integers(0, 3, n), 3)
    T, mu, sigma = linear_statistic(G, H)
    emp_mu, emp_sigma = _permutation_moments(G, H)
    np.testing.assert_allclose(mu, emp_mu, atol=1e-10)
    np.testing.assert_allclose(sigma, emp_sigma, atol=1e-10)
    np.testing.assert_allclose(T, (G.T @ H).ravel())


def test_perfect_association_sign_pattern():
    # n = 4, g and h identical binary one-hots
    G = H = one_hot([0, 0, 1, 1], 2)
    T, mu, sigma = linear_statistic(G, H)
    assert np.array_equal(np.sign(T - mu), [1, -1, -1, 1])
    emp_mu, emp_sigma = _permutation_moments(G, H)
    np.testing.assert_allclose(mu, emp_mu)
    np.testing.assert_allclose(sigma, emp_sigma, atol=1e-12)
    # the observed table is the most extreme of the 4! permutations
    c = standardized_statistic(T, mu, sigma)
    perms = [standardized_statistic((G.T @ H[list(p)]).ravel(), mu, sigma) for p in itertools.permutations(range(4))]
    assert c == pytest.approx(max(perms))
    assert sum(s >= c - 1e-9 for s in perms) == 8


def test_constant_response_gives_zero_covariance():
    G = one_hot([0, 1, 0, 1, 1], 2)
    H = one_hot([2, 2, 2, 2, 2], 3)
    T, mu, sigma = linear_statistic(G, H)
    assert np.all(sigma == 0)
    np.testing.assert_allclose(T, mu)
    assert standardized_statistic(T, mu, sigma) == 0.0


def test_single_positive_weight_rejected():
    G = one_hot([0, 1, 1], 2)
    H = one_hot([0, 1, 0], 2)
    with pytest.raises(ValueError):
        linear_statistic(G, H, np.array([0.0, 1.0, 0.0]))


def test_weights_equal_replication():
    G = one_hot([0, 1, 1, 0, 1], 2)
    H = one_hot([0, 1, 2, 2, 1], 3)
    w = np.array([2, 1, 3, 1, 2])
    rep = np.repeat(np.arange(5), w)
    for a, b in zip(linear_statistic(G, H, w), linear_statistic(G[rep], H[rep])):
        np.testing.assert_allclose(a, b, atol=1e-12)


# -- test statistics ----------------------------------------------------------


def test_t_equals_mu_gives_zero_for_both_kinds():
    sigma = np.diag([1.0, 2.0, 0.0])
    mu = np.array([1.0, 2.0, 3.0])
    assert standardized_statistic(mu, mu, sigma, "quadratic") == 0.0
    assert standardized_statistic(mu, mu, sigma, "maximum") == 0.0


def test_balanced_two_by_two_against_direct_formula():
    # contingency [[30, 10], [10, 30]] expanded to 80 observations
    cells = [(0, 0, 30), (0, 1, 10), (1, 0, 10), (1, 1, 30)]
    g = np.concatenate([[a] * k for a, _, k in cells])
    h = np.concatenate([[b] * k for _, b, k in cells])
    G, H = one_hot(g, 2), one_hot(h, 2)
    T, mu, sigma = linear_statistic(G, H)
    c = standardized_statistic(T, mu, sigma)
    # independent oracle: explicit moments and numpy's SVD pseudo-inverse
    n = 80.0
    hbar = H.mean(axis=0)
    V = np.diag(hbar) - np.outer(hbar, hbar)
    A = n / (n - 1) * G.T @ G - np.outer(G.sum(0), G.sum(0)) / (n - 1)
    S = np.einsum("ab,cd->acbd", A, V).reshape(4, 4)
    d = (G.T @ H).ravel() - np.outer(G.sum(0), hbar).ravel()
    oracle = d @ np.linalg.pinv(S, rcond=1e-10) @ d
    assert c == pytest.approx(oracle, abs=1e-9)
    # and the classical identity c = (n-1)/n * Pearson X^2, with X^2 = 20 here
    pearson = stats.chi2_contingency([[30, 10], [10, 30]], correction=False)[0]
    assert pearson == pytest.approx(20.0)
    assert c == pytest.approx((n - 1) / n * pearson, abs=1e-9)


def test_rank_deficient_sigma_is_finite():
    rng = np.random.default_rng(1)
    G = one_hot(rng.integers(0, 4, 60), 4)
    H = one_hot(rng.integers(0, 5, 60), 5)
    T, mu, sigma = linear_statistic(G, H)
    assert cit.covariance_rank(sigma) == 3 * 4
    assert np.isfinite(standardized_statistic(T, mu, sigma))


def test_maximum_statistic_by_hand():
    d = np.array([1.0, -3.0, 0.5])
    sigma = np.diag([1.0, 4.0, 0.25])
    assert standardized_statistic(d, np.zeros(3), sigma, "maximum") == pytest.approx(1.5)


# -- p-values -----------------------------------------------------------------


def test_zero_statistic_p_is_one():
    assert p_value(0.0, np.eye(3)) == 1.0


def test_chi_square_critical_value():
    assert p_value(3.841, np.diag([1.0, 0.0])) == pytest.approx(0.05, abs=1e-3)
    assert p_value(3.841, np.diag([1.0, 0.0])) == pytest.approx(stats.chi2.sf(3.841, 1))


def test_maximum_asymptotic_is_bonferroni_normal():
    sigma = np.eye(4)
    assert p_value(2.5, sigma, "maximum") == pytest.approx(8 * stats.norm.sf(2.5))
    assert p_value(0.1, sigma, "maximum") == 1.0


def _exact_permutation_p(G, H, kind="quadratic"):
    T, mu, sigma = linear_statistic(G, H)
    obs = standardized_statistic(T, mu, sigma, kind)
    perms = np.array(list(itertools.permutations(range(len(H)))))
    Ts = np.einsum("ip,biq->bpq", G, H[perms]).reshape(len(perms), -1)
    s = np.array([standardized_statistic(t, mu, sigma, kind) for t in Ts])
    return obs, sigma, np.mean(s >= obs - 1e-10 * max(1, obs))


@pytest.mark.parametrize("kind", ["quadratic", "maximum"])
def test_monte_carlo_matches_exact_enumeration(kind):
    rng = np.random.default_rng(7)
    n = 8
    G = one_hot(np.array([0, 0, 0, 0, 1, 1, 1, 1]), 2)
    H = one_hot(rng.integers(0, 3, n), 3)
    obs, sigma, exact = _exact_permutation_p(G, H, kind)
    mc = p_value(obs, sigma, kind, "monte_carlo", data=(G, H, None), n_permutations=20000, rng=0)
    se = math.sqrt(exact * (1 - exact) / 20000)
    assert abs(mc - exact) < 4 * se + 1e-4


def test_monte_carlo_p_is_never_zero_and_seeded():
    G = one_hot([0] * 20 + [1] * 20, 2)
    H = one_hot([0] * 20 + [1] * 20, 2)
    T, mu, sigma = linear_statistic(G, H)
    c = standardized_statistic(T, mu, sigma)
    p = p_value(c, sigma, method="monte_carlo", data=(G, H, None), n_permutations=999, rng=3)
    assert p == pytest.approx(1 / 1000)
    a = p_value(1.0, sigma, method="monte_carlo", data=(G, H, None), n_permutations=500, rng=5)
    b = p_value(1.0, sigma, method="monte_carlo", data=(G, H, None), n_permutations=500, rng=5)
    assert a == b


def test_asymptotic_agrees_with_monte_carlo_at_large_n():
    # away from small-sample discreteness the chi-square approximation is tight
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = 400
        G = one_hot(rng.integers(0, 2, n), 2)
        H = one_hot(rng.integers(0, 3, n), 3)
        T, mu, sigma = linear_statistic(G, H)
        c = standardized_statistic(T, mu, sigma)
        pa = p_value(c, sigma)
        pm = p_value(c, sigma, method="monte_carlo", data=(G, H, None), n_permutations=20000, rng=seed)
        worst = max(worst, abs(pa - pm))
    assert worst < 0.02


def test_node_fast_path_matches_generic_path():
    schema = survey_schema()
    rng = np.random.default_rng(3)
    n = 150
    X = np.column_stack([
        rng.integers(0, len(c.levels), n) if c.nominal else rng.integers(18, 60, n) for c in schema
    ]).astype(float)
    y = rng.integers(0, 6, n)
    w = rng.integers(1, 3, n).astype(float)
    H = influence_matrix(y)
    for rank_numeric in (False, True):
        config = CitConfig(rank_numeric=rank_numeric)
        fast = cit._node_pvalues(X, y, w, schema, config)
        for j in range(len(schema)):
            G = covariate_transform(schema, j, X, rank_numeric)
            if rank_numeric and not schema[j].nominal:
                G = stats.rankdata(X[:, j]).reshape(-1, 1)
            T, mu, sigma = linear_statistic(G, H, w)
            c = standardized_statistic(T, mu, sigma)
            assert fast[j][1] == pytest.approx(c, rel=1e-8)
            assert math.exp(fast[j][0]) == pytest.approx(p_value(c, sigma), rel=1e-6, abs=1e-300)


# -- selection ----------------------------------------------------------------


def test_pure_node_and_constant_covariates_select_nothing():
    schema = small_schema()
    X = np.column_stack([np.arange(30) % 3, np.arange(30)]).astype(float)
    assert select_covariate(X, np.full(30, 4), np.ones(30), schema, CitConfig()) is None
    Xc = np.column_stack([np.zeros(30), np.full(30, 5.0)])
    y = np.arange(30) % 4
    assert select_covariate(Xc, y, np.ones(30), schema, CitConfig()) is None


def test_planted_genre_is_selected():
    schema = survey_schema()
    rng = np.random.default_rng(11)
    n = 200
    X = np.column_stack([
        rng.integers(0, len(c.levels), n) if c.nominal else rng.integers(18, 60, n) for c in schema
    ]).astype(float)
    g = schema.index("preferred_genre")
    y = X[:, g].astype(int) * 2  # genre determines the element
    sel = select_covariate(X, y, np.ones(n), schema, CitConfig())
    assert sel.covariate == g and sel.p_adjusted < 1e-6
    # Monte-Carlo confirms: no permutation reaches the observed statistic
    mc = select_covariate(X, y, np.ones(n), schema, CitConfig(p_value_method="monte_carlo", n_permutations=999))
    assert mc.covariate == g
    assert mc.p_adjusted == pytest.approx(min(1, len(schema) / 1000))


def test_bonferroni_multiplies_by_candidates():
    schema = small_schema()
    rng = np.random.default_rng(4)
    X = np.column_stack([rng.integers(0, 3, 90), rng.normal(size=90)])
    y = (X[:, 0] > 0).astype(int) + rng.integers(0, 2, 90)
    a = select_covariate(X, y, np.ones(90), schema, CitConfig(alpha=0.999, multiplicity="none"))
    b = select_covariate(X, y, np.ones(90), schema, CitConfig(alpha=0.999))
    assert b.p_adjusted == pytest.approx(min(1, 2 * a.p_adjusted))


# -- split search -------------------------------------------------------------


def test_binary_separating_split():
    schema = CovariateSchema((Covariate("b", "nominal", ("no", "yes")),))
    x = np.repeat([0.0, 1.0], 20)[:, None]
    y = np.repeat([3, 9], 20)
    rule = best_split(x, y, np.ones(40), 0, schema, CitConfig())
    assert rule.left_levels == (0,)


def test_numeric_constant_has_no_split():
    schema = small_schema()
    X = np.column_stack([np.arange(40) % 3, np.full(40, 2.0)])
    assert best_split(X, np.arange(40) % 2, np.ones(40), 1, schema, CitConfig()) is None


def test_numeric_threshold_is_midpoint():
    schema = small_schema()
    z = np.arange(40, dtype=float)
    X = np.column_stack([np.zeros(40), z])
    y = (z >= 25).astype(int)
    assert best_split(X, y, np.ones(40), 1, schema, CitConfig()).threshold == 24.5


def _exhaustive_best(x, y, L, min_bucket):
    """Brute force over all two-sided partitions of the present levels."""
    n = len(y)
    H = one_hot(y, y.max() + 1)
    hbar = H.mean(0)
    V = np.diag(hbar) - np.outer(hbar, hbar)
    Vp = np.linalg.pinv(V)
    best, arg = -1, None
    for r in range(1, L):
        for left in itertools.combinations(range(L), r):
            m = np.isin(x, left)
            wl = m.sum()
            if wl < min_bucket or n - wl < min_bucket:
                continue
            d = H[m].sum(0) - wl * hbar
            s = (n - 1) / (wl * (n - wl)) * d @ Vp @ d
            if s > best + 1e-12:
                best, arg = s, set(left)
    return best, arg


@pytest.mark.parametrize("L", [6, 12])
def test_ordered_scan_matches_exhaustive_for_two_classes(L):
    rng = np.random.default_rng(L)
    schema = CovariateSchema((Covariate("country", "nominal", tuple(f"c{i}" for i in range(L))),))
    x = np.repeat(np.arange(L), 15)
    p = rng.uniform(0.1, 0.9, L)
    y = (rng.random(len(x)) < p[x]).astype(int)
    X = x[:, None].astype(float)
    w = np.ones(len(x))
    exhaustive = best_split(X, y, w, 0, schema, CitConfig(max_exhaustive_levels=20))
    ordered = best_split(X, y, w, 0, schema, CitConfig(max_exhaustive_levels=2))
    assert exhaustive == ordered
    _, left = _exhaustive_best(x, y, L, 7)
    assert set(exhaustive.left_levels) in (left, set(range(L)) - left)


def test_high_cardinality_takes_ordered_path(monkeypatch):
    calls = []
    original = cit._first_pc_order
    monkeypatch.setattr(cit, "_first_pc_order", lambda *a: calls.append(1) or original(*a))
    schema = survey_schema()
    j = schema.index("country")
    rng = np.random.default_rng(0)
    X = np.zeros((400, len(schema)))
    X[:, j] = np.arange(400) % 18
    y = (X[:, j] < 5).astype(int) * 3 + rng.integers(0, 2, 400)
    rule = best_split(X, y, np.ones(400), j, schema, CitConfig())
    assert calls and rule is not None


def test_absent_levels_follow_heavier_child():
    schema = CovariateSchema((Covariate("c", "nominal", ("a", "b", "c", "d")),))
    x = np.array([0] * 30 + [1] * 10, dtype=float)[:, None]
    y = np.array([0] * 30 + [1] * 10)
    rule = best_split(x, y, np.ones(40), 0, schema, CitConfig())
    # level "a" (30 rows) is heavier; unseen "c", "d" go with it
    assert rule.left_levels == (0, 2, 3)


# -- growing ------------------------------------------------------------------


def test_small_node_is_single_leaf():
    schema = small_schema()
    X = np.column_stack([np.arange(10) % 3, np.arange(10)]).astype(float)
    y = np.arange(10) % 4
    tree = grow_tree_arrays(X, y, schema)
    assert isinstance(tree, Leaf)
    assert tree.counts[:4] == (3, 3, 2, 2) and tree.total == 10


def test_planted_tree_has_two_pure_leaves():
    schema = CovariateSchema((Covariate("genre", "nominal", ("Action", "Strategy")), Covariate("age", "numeric")))
    rng = np.random.default_rng(2)
    genre = np.repeat([0, 1], 60)
    X = np.column_stack([genre, rng.integers(18, 60, 120)]).astype(float)
    y = np.where(genre == 0, ELEMENTS.index("Competition"), ELEMENTS.index("Narrative"))
    tree = grow_tree_arrays(X, y, schema)
    assert isinstance(tree, Decision) and tree.split.covariate == 0
    assert isinstance(tree.left, Leaf) and isinstance(tree.right, Leaf)
    assert max(tree.left.counts) == tree.left.total and max(tree.right.counts) == tree.right.total


def test_non_integer_weights_rejected():
    schema = small_schema()
    X = np.zeros((30, 2))
    with pytest.raises(ValueError, match="integer"):
        grow_tree_arrays(X, np.zeros(30, int), schema, weights=np.full(30, 0.5))


def test_max_depth_limits_growth():
    schema = survey_schema()
    rng = np.random.default_rng(5)
    n = 600
    X = np.column_stack([rng.integers(0, len(c.levels), n) if c.nominal else rng.integers(18, 60, n) for c in schema]).astype(float)
    y = (X[:, schema.index("preferred_genre")] * 3 + X[:, schema.index("lat")]).astype(int) % N_ELEMENTS
    tree = grow_tree_arrays(X, y, schema, CitConfig(max_depth=1))
    assert all(leaf.depth <= 1 for leaf in iter_leaves(tree))


def _random_data(seed, n=None):
    rng = np.random.default_rng(seed)
    schema = survey_schema()
    n = n or int(rng.integers(60, 300))
    X = np.column_stack([rng.integers(0, len(c.levels), n) if c.nominal else rng.integers(18, 60, n) for c in schema]).astype(float)
    g = schema.index("preferred_genre")
    signal = rng.random(n) < 0.6
    y = np.where(signal, X[:, g].astype(int) * 2, rng.integers(0, 8, n))
    return schema, X, y


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_row_order_invariance(seed):
    schema, X, y = _random_data(seed)
    perm = np.random.default_rng(seed + 1).permutation(len(y))
    a = grow_tree_arrays(X, y, schema)
    b = grow_tree_arrays(X[perm], y[perm], schema)
    assert tree_bytes(a, schema) == tree_bytes(b, schema)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_structural_guards(seed):
    schema, X, y = _random_data(seed)
    config = CitConfig()
    tree = grow_tree_arrays(X, y, schema, config)
    for node, _ in iter_decisions(tree):
        assert node.p_adjusted <= config.alpha
        assert node.left.total >= config.min_bucket and node.right.total >= config.min_bucket


def test_weight_scaling_monte_carlo_gives_identical_tree():
    schema, X, y = _random_data(3, n=150)
    w = np.random.default_rng(0).integers(1, 3, len(y)).astype(float)
    config = CitConfig(p_value_method="monte_carlo", n_permutations=199, rng_seed=4)
    a = grow_tree_arrays(X, y, schema, config, w)
    b = grow_tree_arrays(X, y, schema, config, 3 * w)
    sa, sb = [(n.split, d) for n, d in iter_decisions(a)], [(n.split, d) for n, d in iter_decisions(b)]
    assert sa == sb and sa


def test_weight_scaling_asymptotic_keeps_argmin():
    schema, X, y = _random_data(8, n=200)
    w = np.ones(len(y))
    a = cit._node_pvalues(X, y, w, schema, CitConfig())
    b = cit._node_pvalues(X, y, 2 * w, schema, CitConfig())
    assert int(np.argmin([p for p, _ in a])) == int(np.argmin([p for p, _ in b]))


# -- prediction ---------------------------------------------------------------


def test_table_leaf_distribution():
    counts = [0] * 21
    counts[ELEMENTS.index("Objectives")] = 4
    counts[ELEMENTS.index("Acknowledgment")] = 3
    counts[ELEMENTS.index("Point")] = 2
    for name in ("Competition", "Progression", "Stats"):
        counts[ELEMENTS.index(name)] = 1
    leaf = Leaf(tuple(counts), 12)
    d = predict_distribution(leaf, np.zeros(9), survey_schema())
    assert round(d[ELEMENTS.index("Objectives")], 3) == 0.333
    assert d[ELEMENTS.index("Acknowledgment")] == 0.25
    assert round(d[ELEMENTS.index("Point")], 3) == 0.167


def test_pure_leaf_unit_mass():
    counts = [0] * 21
    counts[5] = 9
    assert predict_distribution(Leaf(tuple(counts), 9), np.zeros(2), small_schema()).tolist() == [
        1.0 if i == 5 else 0.0 for i in range(21)
    ]


def test_random_tree_distributions_sum_to_one():
    from tailor.synthetic import random_query

    rng = np.random.default_rng(0)
    schema = survey_schema()
    tree = random_tree(rng, schema)
    for _ in range(1000):
        d = predict_distribution(tree, random_query(rng, schema), schema)
        assert abs(d.sum() - 1) < 1e-9 and d.min() >= 0


def test_unseen_level_policies():
    schema = CovariateSchema((Covariate("c", "nominal", ("a", "b")),))
    heavy = Leaf((5,) + (0,) * 20, 5)
    light = Leaf((0, 2) + (0,) * 19, 2)
    tree = Decision(cit.SplitRule(0, left_levels=(1,)), 0.01, 9.0, light, heavy)
    with pytest.raises(UnseenLevelError):
        predict_distribution(tree, {"c": "zzz"}, schema)
    d = predict_distribution(tree, {"c": "zzz"}, schema, "majority-branch")
    assert d[0] == 1.0
