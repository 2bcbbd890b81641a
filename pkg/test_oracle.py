"""
测试 oracle.py：有限链真值、求积参考 P* 与随机低秩链
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import InvalidInput
from features import GaussianKernelSpec, orthogonalize, sample_rff, uniform_box_quadrature
from oracle import (EulerGridKernel, FiniteChain, FiniteChainKernel, IndependentKernel,
                    IndicatorFeatureMap, chain_diffusion_distances, chain_feature_maps,
                    chain_projection, counting_grid, quadrature_projection, random_lowrank_chain,
                    stationary_distribution, trapezoid_grid)
from simulator import four_well_1d, quadratic

TWO_STATE = [[0.9, 0.1], [0.2, 0.8]]


def _rff_maps(lower, upper, n_features=50, bandwidth=0.5):
    raw = sample_rff(GaussianKernelSpec(bandwidth=bandwidth, dim=1), n_features, seed=0)
    box = np.array([[lower], [upper]])
    samples, measure = uniform_box_quadrature(box, n_features, seed=1, n_samples=5000, padding=0.0)
    ortho = orthogonalize(raw, samples, measure=measure)
    return ortho, ortho


def test_stationary_distribution_two_state():
    assert_allclose(stationary_distribution(TWO_STATE), [2 / 3, 1 / 3], atol=1e-12)


def test_finite_chain_rejects_non_stochastic():
    with pytest.raises(InvalidInput):
        FiniteChain(transition=[[0.5, 0.4], [0.2, 0.8]])
    with pytest.raises(InvalidInput):
        FiniteChain(transition=[[1.5, -0.5], [0.2, 0.8]])


def test_finite_chain_round_trip():
    chain = FiniteChain(transition=TWO_STATE)
    restored = FiniteChain.from_dict(chain.to_dict())
    assert np.array_equal(restored.transition, chain.transition)
    assert np.array_equal(restored.stationary, chain.stationary)


def test_sample_path_deterministic_and_in_range():
    chain = random_lowrank_chain(5, 2, seed=0)
    a = chain.sample_path(1000, seed=3)
    assert np.array_equal(a, chain.sample_path(1000, seed=3))
    assert a.min() >= 0 and a.max() < 5
    assert chain.sample_path(10, seed=0, start=4)[0] == 4


def test_chain_projection_examples():
    identity = FiniteChain(transition=np.eye(3), stationary=np.full(3, 1 / 3))
    assert_allclose(chain_projection(identity), np.eye(3) / 3, atol=1e-15)
    expected = [[0.6, 1 / 15], [1 / 15, 4 / 15]]
    assert_allclose(chain_projection(FiniteChain(transition=TWO_STATE)), expected, atol=5e-5)


def test_independent_chain_projection_has_rank_one():
    pi = np.array([0.2, 0.5, 0.3])
    s = np.linalg.svd(chain_projection(FiniteChain(transition=np.tile(pi, (3, 1)))), compute_uv=False)
    assert s[1] <= 1e-12


def test_chain_diffusion_distances():
    distances = chain_diffusion_distances(FiniteChain(transition=TWO_STATE))
    assert_allclose(np.diag(distances), 0.0)
    assert np.array_equal(distances, distances.T)
    assert abs(distances[0, 1] - 0.7 * np.sqrt(2)) <= 1e-12


@pytest.mark.parametrize("n_states,rank", [(4, 1), (6, 2), (10, 3), (8, 8)])
def test_random_lowrank_chain_properties(n_states, rank):
    chain = random_lowrank_chain(n_states, rank, seed=n_states + rank)
    assert_allclose(chain.transition.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(chain.transition >= 0)
    s = np.linalg.svd(chain.transition, compute_uv=False)
    if rank < n_states:
        assert s[rank] <= 1e-12
    assert s[rank - 1] > 1e-12
    assert_allclose(chain.stationary @ chain.transition, chain.stationary, atol=1e-10)


def test_random_lowrank_chain_rank_one_rows_identical():
    chain = random_lowrank_chain(5, 1, seed=0)
    assert np.array_equal(chain.transition, np.tile(chain.transition[0], (5, 1)))


def test_random_lowrank_chain_rejects_bad_rank():
    with pytest.raises(InvalidInput):
        random_lowrank_chain(3, 4, seed=0)


def test_indicator_map_rejects_non_integer_states():
    feature_map = IndicatorFeatureMap(3)
    assert_allclose(feature_map.evaluate([2.0]), [0.0, 0.0, 1.0])
    with pytest.raises(InvalidInput):
        feature_map.evaluate([0.5])
    with pytest.raises(InvalidInput):
        feature_map.evaluate([3.0])


def test_counting_quadrature_reproduces_chain_projection():
    chain = random_lowrank_chain(6, 2, seed=4)
    left, right = chain_feature_maps(chain)
    projection, refinement = quadrature_projection(FiniteChainKernel(chain), counting_grid(6),
                                                   left, right, refine=False)
    assert refinement is None
    assert_allclose(projection, chain_projection(chain), atol=1e-15)


def test_trapezoid_grid_volume_and_coarsening():
    grid = trapezoid_grid(-1.0, 1.0, 5)
    assert abs(grid.volume - 2.0) <= 1e-15
    coarse = grid.coarsen()
    assert coarse.n_nodes == 3
    assert_allclose(coarse.nodes[:, 0], [-1.0, 0.0, 1.0])
    assert trapezoid_grid(-1.0, 1.0, 4).coarsen() is None


def test_independent_kernel_projection_has_rank_one():
    left, right = _rff_maps(-5.0, 5.0)
    projection, _ = quadrature_projection(IndependentKernel(0.0, 1.0), trapezoid_grid(-5.0, 5.0, 201),
                                          left, right)
    s = np.linalg.svd(projection, compute_uv=False)
    assert s[1] <= 1e-10 * s[0]


def test_euler_grid_refinement_is_small_for_smooth_kernel():
    left, right = _rff_maps(-5.0, 5.0)
    kernel = EulerGridKernel(quadratic(1.0), inner_dt=0.01, stride=10)
    projection, refinement = quadrature_projection(kernel, trapezoid_grid(-5.0, 5.0, 401), left, right)
    assert np.all(np.isfinite(projection))
    assert refinement < 1e-4


def test_euler_grid_step_matrix_is_stochastic():
    kernel = EulerGridKernel(four_well_1d(), inner_dt=5e-3, stride=2)
    step = kernel.step_matrix(trapezoid_grid(-2.5, 2.5, 201))
    assert np.all(step >= 0)
    assert_allclose(step.sum(axis=1), 1.0, atol=1e-12)


def test_euler_grid_kernel_rejects_bad_arguments():
    with pytest.raises(InvalidInput):
        EulerGridKernel(quadratic(1.0, dim=2), inner_dt=0.01, stride=1)
    with pytest.raises(InvalidInput):
        EulerGridKernel(quadratic(1.0), inner_dt=0.01, stride=0)


def test_euler_grid_projection_converges_under_refinement():
    left, right = _rff_maps(-5.0, 5.0)
    kernel = EulerGridKernel(quadratic(1.0), inner_dt=0.01, stride=10)
    projections = [quadrature_projection(kernel, trapezoid_grid(-5.0, 5.0, n), left, right, refine=False)[0]
                   for n in (51, 101, 201)]
    first = np.linalg.norm(projections[1] - projections[0], 'fro')
    second = np.linalg.norm(projections[2] - projections[1], 'fro')
    assert second <= 0.5 * first + 1e-12
    _, refinement = quadrature_projection(kernel, trapezoid_grid(-5.0, 5.0, 101), left, right)
    assert_allclose(refinement, first, rtol=1e-10, atol=1e-15)
