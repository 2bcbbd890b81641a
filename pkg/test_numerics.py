"""
测试 numerics.py：SVD、对称特征分解、最小代价匹配、k-means++ 初始化
"""
import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import InvalidInput
from numerics import kmeans_pp_init, min_cost_permutation, sym_eig, thin_svd, truncation_error


def test_svd_identity():
    result = thin_svd(np.eye(3))
    assert_allclose(result.singular_values, [1.0, 1.0, 1.0])


def test_svd_diagonal():
    result = thin_svd(np.diag([3.0, 2.0, 1.0]))
    assert_allclose(result.singular_values, [3.0, 2.0, 1.0])
    assert_allclose(np.abs(result.u), np.eye(3), atol=1e-14)
    assert_allclose(np.abs(result.v), np.eye(3), atol=1e-14)


def test_svd_rank_deficient():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 4))
    result = thin_svd(a)
    assert result.singular_values.shape == (4,)
    assert np.all(result.singular_values[2:] <= 1e-9 * np.linalg.norm(a))
    assert_allclose((result.u * result.singular_values) @ result.v.T, a, atol=1e-12)


def test_svd_orthonormal_and_sorted():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((7, 4))
    result = thin_svd(a)
    assert_allclose(result.u.T @ result.u, np.eye(4), atol=1e-12)
    assert_allclose(result.v.T @ result.v, np.eye(4), atol=1e-12)
    assert np.all(np.diff(result.singular_values) <= 0)
    # 符号约定：U 每列绝对值最大元素为正
    pivots = np.argmax(np.abs(result.u), axis=0)
    assert np.all(result.u[pivots, np.arange(4)] > 0)


def test_svd_rejects_nan():
    with pytest.raises(InvalidInput):
        thin_svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


@pytest.mark.parametrize("r", [1, 2, 3, 4])
def test_truncation_error_equals_next_singular_value(r):
    rng = np.random.default_rng(10 + r)
    a = rng.standard_normal((6, 5))
    result = thin_svd(a)
    truncated = (result.u[:, :r] * result.singular_values[:r]) @ result.v[:, :r].T
    assert abs(np.linalg.norm(a - truncated, 2) - result.singular_values[r]) <= 1e-10
    assert abs(truncation_error(a, r) - result.singular_values[r]) <= 1e-12


def test_truncation_error_full_rank_is_zero():
    assert truncation_error(np.eye(3), 3) == 0.0


def test_sym_eig_example():
    vals, vecs = sym_eig([[2.0, 1.0], [1.0, 2.0]])
    assert_allclose(vals, [3.0, 1.0], atol=1e-14)
    assert_allclose(vecs[:, 0], [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-14)
    assert_allclose(np.abs(vecs[:, 1]), [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-14)
    assert vecs[0, 1] * vecs[1, 1] < 0


def test_sym_eig_trace_and_orthogonality():
    rng = np.random.default_rng(2)
    b = rng.standard_normal((6, 6))
    a = b + b.T
    vals, vecs = sym_eig(a)
    assert abs(vals.sum() - np.trace(a)) <= 1e-12 * np.abs(a).sum()
    assert_allclose(vecs.T @ vecs, np.eye(6), atol=1e-12)
    assert_allclose(vecs @ np.diag(vals) @ vecs.T, a, atol=1e-12)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(InvalidInput):
        sym_eig([[1.0, 2.0], [0.0, 1.0]])


def test_min_cost_permutation_examples():
    assert min_cost_permutation([[0.0, 1.0], [1.0, 0.0]]) == ((0, 1), 0.0)
    assert min_cost_permutation([[1.0, 0.0], [0.0, 1.0]]) == ((1, 0), 0.0)


def test_min_cost_permutation_matches_brute_force():
    rng = np.random.default_rng(3)
    for trial in range(100):
        m = 1 + trial % 6
        cost = rng.random((m, m))
        permutation, total = min_cost_permutation(cost)
        brute = min(sum(cost[i, p[i]] for i in range(m)) for p in itertools.permutations(range(m)))
        assert sorted(permutation) == list(range(m))
        assert abs(total - brute) <= 1e-12


def test_min_cost_permutation_rejects_non_square():
    with pytest.raises(InvalidInput):
        min_cost_permutation(np.zeros((2, 3)))


def test_kmeans_pp_singleton():
    centers = kmeans_pp_init([[4.0, 2.0]], [1.0], 1, seed=0)
    assert_allclose(centers, [[4.0, 2.0]])


def test_kmeans_pp_selects_all_distinct_points():
    points = np.array([[0.0], [1.0], [5.0]])
    centers = kmeans_pp_init(points, [1.0, 1.0, 1.0], 3, seed=7)
    assert sorted(centers[:, 0]) == [0.0, 1.0, 5.0]


def test_kmeans_pp_deterministic():
    rng = np.random.default_rng(4)
    points = rng.standard_normal((50, 2))
    weights = rng.random(50)
    a = kmeans_pp_init(points, weights, 5, seed=11)
    b = kmeans_pp_init(points, weights, 5, seed=11)
    assert np.array_equal(a, b)


def test_kmeans_pp_skips_zero_weight_points():
    points = np.array([[0.0], [1.0], [100.0]])
    centers = kmeans_pp_init(points, [1.0, 1.0, 0.0], 2, seed=0)
    assert 100.0 not in centers[:, 0]


def test_kmeans_pp_rejects_too_many_centers():
    with pytest.raises(InvalidInput):
        kmeans_pp_init([[0.0], [0.0], [1.0]], [1.0, 1.0, 1.0], 3, seed=0)
