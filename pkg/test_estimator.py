"""
测试 estimator.py：转移对累加、合并、KME 重塑与评估
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import InvalidInput
from estimator import (accumulate, embedding_error, kme_evaluate, merge, pair_sum, reshape,
                       suggest_rank)
from features import (GaussianKernelSpec, IdentityFeatureMap, MeasureDescriptor, OrthoFeatureMap,
                      RawFeatureMap)
from oracle import FiniteChain, chain_estimate, chain_feature_maps, chain_projection
from schemas import ProjectionEstimate, Trajectory

ID1 = IdentityFeatureMap(dim=1)


def _estimate(matrix, left=ID1, right=ID1):
    return ProjectionEstimate(pair_sum=np.asarray(matrix, dtype=float), pair_count=1,
                              left_map_id=left.map_id, right_map_id=right.map_id)


def _constant_map():
    """Φ(x) ≡ (1)：两个 w = 0 的 RFF（缩放因子为 1）取第一行"""
    raw = RawFeatureMap(spec=GaussianKernelSpec(bandwidth=1.0, dim=1),
                        frequencies=[[0.0], [0.0]], phases=[0.0, 0.0], seed=0)
    return OrthoFeatureMap(raw=raw, transform=[[1.0, 0.0]], rho=[1.0],
                           measure=MeasureDescriptor(kind='empirical', n_samples=1))


def test_accumulate_identity_features():
    traj = Trajectory(states=[[1.0], [2.0], [3.0]], sample_interval=1.0, inner_dt=1.0)
    est = accumulate(traj, ID1, ID1)
    assert est.pair_count == 2
    assert_allclose(est.p_hat, [[4.0]])


def test_accumulate_constant_features():
    states = np.random.default_rng(0).standard_normal((25, 1))
    constant = _constant_map()
    est = accumulate(states, constant, constant)
    assert_allclose(est.p_hat, [[1.0]], atol=1e-15)


def test_accumulate_chunked_is_deterministic():
    states = np.random.default_rng(1).standard_normal((100, 2))
    left = IdentityFeatureMap(dim=2)
    est = accumulate(states, left, left, chunk_size=16)
    expected = None
    for start in range(0, 99, 16):
        stop = min(start + 16, 99)
        partial = states[start:stop].T @ states[start + 1:stop + 1]
        expected = partial if expected is None else expected + partial
    assert np.array_equal(est.pair_sum, expected)
    assert np.array_equal(accumulate(states, left, left, chunk_size=16).pair_sum, est.pair_sum)
    full = accumulate(states, left, left)
    assert_allclose(full.p_hat, states[:-1].T @ states[1:] / 99, atol=1e-13)


def test_accumulate_rejects_short_trajectory():
    with pytest.raises(InvalidInput):
        accumulate(np.array([[1.0]]), ID1, ID1)


def test_accumulate_rejects_dimension_mismatch():
    with pytest.raises(InvalidInput):
        accumulate(np.zeros((5, 2)), ID1, ID1)


def test_accumulate_rejects_nan():
    with pytest.raises(InvalidInput):
        accumulate(np.array([[1.0], [np.nan], [2.0]]), ID1, ID1)


def test_merge_matches_concatenated_pairs():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((30, 1))
    b = rng.standard_normal((50, 1))
    merged = merge(accumulate(a, ID1, ID1), accumulate(b, ID1, ID1))
    expected = (a[:-1].T @ a[1:] + b[:-1].T @ b[1:]) / (29 + 49)
    assert merged.pair_count == 78
    assert_allclose(merged.p_hat, expected, atol=1e-14)
    trajs = [Trajectory(states=a, sample_interval=1.0, inner_dt=1.0),
             Trajectory(states=b, sample_interval=1.0, inner_dt=1.0)]
    assert_allclose(accumulate(trajs, ID1, ID1).p_hat, expected, atol=1e-14)


def test_merge_rejects_different_maps():
    a = _estimate([[1.0]])
    b = ProjectionEstimate(pair_sum=[[1.0]], pair_count=1, left_map_id='other', right_map_id=ID1.map_id)
    with pytest.raises(InvalidInput):
        merge(a, b)
    with pytest.raises(InvalidInput):
        merge(a, _estimate(np.eye(2), IdentityFeatureMap(2), IdentityFeatureMap(2)))


def test_reshape_diagonal():
    est = _estimate(np.diag([3.0, 2.0, 1.0]), IdentityFeatureMap(3), IdentityFeatureMap(3))
    model = reshape(est, 2)
    assert_allclose(model.matrix, np.diag([3.0, 2.0, 0.0]), atol=1e-12)
    assert abs(model.residual_sigma - 1.0) <= 1e-12
    assert model.rank == 2


def test_reshape_full_rank_reproduces_estimate():
    rng = np.random.default_rng(3)
    p = rng.standard_normal((4, 3))
    model = reshape(_estimate(p, IdentityFeatureMap(4), IdentityFeatureMap(3)), 3)
    assert_allclose(model.matrix, p, atol=1e-12)
    assert model.residual_sigma == 0.0


def test_reshape_residual_and_eckart_young():
    rng = np.random.default_rng(4)
    p = rng.standard_normal((6, 5))
    est = _estimate(p, IdentityFeatureMap(6), IdentityFeatureMap(5))
    s = np.linalg.svd(p, compute_uv=False)
    previous = np.inf
    for r in range(1, 6):
        model = reshape(est, r)
        assert abs(np.linalg.norm(p - model.matrix, 2) - model.residual_sigma) <= 1e-10
        frob = np.linalg.norm(p - model.matrix, 'fro')
        assert abs(frob - np.sqrt(np.sum(s[r:] ** 2))) <= 1e-9
        assert frob <= previous + 1e-12
        previous = frob


@pytest.mark.parametrize("r", [0, 4])
def test_reshape_rejects_rank_out_of_range(r):
    est = _estimate(np.eye(3), IdentityFeatureMap(3), IdentityFeatureMap(3))
    with pytest.raises(InvalidInput):
        reshape(est, r)


def test_kme_evaluate_scalar_example():
    model = reshape(_estimate([[4.0]]), 1)
    assert abs(kme_evaluate(model, ID1, ID1, [2.0], [3.0]) - 24.0) <= 1e-12


def test_kme_evaluate_zero_model():
    model = reshape(_estimate(np.zeros((1, 1))), 1)
    assert kme_evaluate(model, ID1, ID1, [2.0], [3.0]) == 0.0


def test_kme_evaluate_plain_estimate_and_batch():
    est = _estimate([[4.0]])
    values = kme_evaluate(est, ID1, ID1, [[1.0], [2.0]], [[1.0], [3.0]])
    assert_allclose(values, [4.0, 24.0])


def test_kme_evaluate_finite_chain_matches_brute_force():
    chain = FiniteChain(transition=[[0.9, 0.1], [0.2, 0.8]])
    left, right = chain_feature_maps(chain)
    est = chain_estimate(chain, left, right)
    p = chain_projection(chain)
    for i in range(2):
        for j in range(2):
            brute = sum(float(u == i) * float(v == j) * p[u, v] for u in range(2) for v in range(2))
            assert abs(kme_evaluate(est, left, right, [float(i)], [float(j)]) - brute) <= 1e-15


def test_kme_evaluate_rejects_map_mismatch():
    chain = FiniteChain(transition=[[0.9, 0.1], [0.2, 0.8]])
    left, right = chain_feature_maps(chain)
    model = reshape(chain_estimate(chain, left, right), 1)
    with pytest.raises(InvalidInput):
        kme_evaluate(model, right, right, [0.0], [1.0])


def test_embedding_error():
    p = np.diag([3.0, 2.0, 1.0])
    est = _estimate(p, IdentityFeatureMap(3), IdentityFeatureMap(3))
    assert embedding_error(reshape(est, 3), p) <= 1e-12
    assert abs(embedding_error(reshape(est, 2), p) - 1.0) <= 1e-12
    assert embedding_error(est, p) == 0.0
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((2, 4, 4))
    assert abs(embedding_error(a, b) - np.sqrt(np.sum((a - b) ** 2))) <= 1e-12


def test_embedding_error_rejects_shape_mismatch():
    with pytest.raises(InvalidInput):
        embedding_error(np.zeros((2, 2)), np.zeros((3, 2)))


def test_suggest_rank():
    assert suggest_rank([10.0, 9.0, 1.0, 0.5]) == (2, 9.0)
    k, ratio = suggest_rank([1.0, 0.0])
    assert k == 1 and ratio == np.inf


def test_pair_sum_single_chunk_equals_product():
    states = np.arange(6, dtype=float).reshape(-1, 1)
    assert_allclose(pair_sum(states, ID1, ID1), [[float(np.dot(states[:-1, 0], states[1:, 0]))]])
