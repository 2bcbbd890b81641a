"""
状态嵌入模块
白化 R = C^{-1/2} P̂ C̃^{-1/2} 后取秩 r SVD，得到嵌入 Ψ̂(x) = Bᵀ Φ(x)、
扩散距离 ‖Ψ̂(x) − Ψ̂(z)‖ 与转移密度 p̂(y|x) = Φ(x)ᵀ B Dᵀ Φ̃(y)
"""
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from errors import InvalidInput
from numerics import thin_svd
from schemas import Embedder, ProjectionEstimate

PROBE_POINTS = 101


def _check_map(expected_id: str, feature_map, side: str):
    if feature_map.map_id != expected_id:
        raise InvalidInput(f"{side} 特征映射 {feature_map.map_id} 与模型记录的 {expected_id} 不一致")


def _is_single(x, dim: int) -> bool:
    ndim = np.ndim(x)
    return ndim == 0 or (ndim == 1 and dim > 1) or (ndim == 1 and np.shape(x)[0] == 1 and dim == 1)


def whiten(est: ProjectionEstimate, left, right) -> np.ndarray:
    """R = diag(ρ)^{-1/2} · P̂ · diag(ρ̃)^{-1/2}"""
    rho = np.asarray(left.norms, dtype=np.float64)
    rho_right = np.asarray(right.norms, dtype=np.float64)
    if est.shape != (rho.shape[0], rho_right.shape[0]):
        raise InvalidInput(f"估计形状 {est.shape} 与特征数 ({rho.shape[0]}, {rho_right.shape[0]}) 不一致")
    if np.any(rho <= 0) or np.any(rho_right <= 0):
        raise InvalidInput("特征范数 ρ 必须严格为正")
    return est.p_hat / np.sqrt(rho)[:, None] / np.sqrt(rho_right)[None, :]


def fit(est: ProjectionEstimate, left, right, r: int) -> Embedder:
    """学习状态嵌入：B = C^{-1/2} Û Σ̂_{[1..r]}，D = C̃^{-1/2} V̂"""
    _check_map(est.left_map_id, left, "左")
    _check_map(est.right_map_id, right, "右")
    max_rank = min(est.shape)
    if not 1 <= r <= max_rank:
        raise InvalidInput(f"rank 必须在 [1, {max_rank}] 内，实际 {r}")
    svd = thin_svd(whiten(est, left, right))
    sigma = svd.singular_values[:r]
    left_factor = (svd.u[:, :r] * sigma) / np.sqrt(left.norms)[:, None]
    right_factor = svd.v[:, :r] / np.sqrt(right.norms)[:, None]
    return Embedder(left_factor=left_factor, right_factor=right_factor, singular_values=sigma,
                    rank=r, left_map_id=est.left_map_id, right_map_id=est.right_map_id)


def embed(e: Embedder, left, x) -> np.ndarray:
    """Ψ̂(x) = Bᵀ Φ(x)；单个状态返回 (r,)，批量返回 (k, r)"""
    _check_map(e.left_map_id, left, "左")
    values = np.atleast_2d(left.evaluate(x)) @ e.left_factor
    return values[0] if _is_single(x, left.dim) else values


def diffusion_distance(e: Embedder, left, x, z):
    """扩散距离 ‖Ψ̂(x) − Ψ̂(z)‖；批量输入逐对计算"""
    psi_x = np.atleast_2d(embed(e, left, x))
    psi_z = np.atleast_2d(embed(e, left, z))
    if psi_x.shape != psi_z.shape:
        raise InvalidInput("x 与 z 的状态数不一致")
    distances = np.linalg.norm(psi_x - psi_z, axis=1)
    return float(distances[0]) if distances.shape[0] == 1 else distances


def pairwise_distances(e: Embedder, left, points) -> np.ndarray:
    """探针点两两扩散距离矩阵"""
    psi = np.atleast_2d(embed(e, left, points))
    return cdist(psi, psi)


def centroid_distances(e: Embedder, left, points, centroids) -> np.ndarray:
    """点到各聚类中心的嵌入空间距离，形状 (点数, 中心数)"""
    psi = np.atleast_2d(embed(e, left, points))
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    if centroids.shape[1] != psi.shape[1]:
        raise InvalidInput(f"中心维度 {centroids.shape[1]} 与嵌入秩 {psi.shape[1]} 不一致")
    return cdist(psi, centroids)


def recover_density(e: Embedder, left, right, x, y):
    """
    p̂(y|x) = Φ(x)ᵀ C^{-1/2} Û Σ̂ V̂ᵀ C̃^{-1/2} Φ̃(y)
    不做正性投影，结果可能为负；批量输入逐对计算
    """
    _check_map(e.right_map_id, right, "右")
    psi = np.atleast_2d(embed(e, left, x))
    right_coords = np.atleast_2d(right.evaluate(y)) @ e.right_factor
    if psi.shape[0] != right_coords.shape[0]:
        raise InvalidInput("x 与 y 的状态数不一致")
    values = np.sum(psi * right_coords, axis=1)
    return float(values[0]) if values.shape[0] == 1 else values


def density_matrix(e: Embedder, left, right, xs, ys) -> np.ndarray:
    """p̂(ys[j] | xs[i]) 组成的矩阵"""
    _check_map(e.right_map_id, right, "右")
    psi = np.atleast_2d(embed(e, left, xs))
    right_coords = np.atleast_2d(right.evaluate(ys)) @ e.right_factor
    return psi @ right_coords.T


def negative_density_fraction(e: Embedder, left, right, probes) -> float:
    """探针点对 (x, y) 中 p̂(y|x) < 0 的比例"""
    return float(np.mean(density_matrix(e, left, right, probes, probes) < 0))


def max_distortion(e: Embedder, left, reference: Embedder, reference_left, probes) -> float:
    """max_{x,z ∈ probes} |dist(x,z) − dist_ref(x,z)|"""
    diff = pairwise_distances(e, left, probes) - pairwise_distances(reference, reference_left, probes)
    return float(np.max(np.abs(diff)))


def probe_grid(states, n_points: int = PROBE_POINTS, lower: Optional[float] = None,
               upper: Optional[float] = None) -> np.ndarray:
    """覆盖轨迹取值范围的一维等距探针网格，形状 (n_points, 1)"""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2 and states.shape[1] != 1:
        raise InvalidInput("探针网格只支持一维状态")
    if n_points < 2:
        raise InvalidInput("n_points 必须 ≥ 2")
    lo = float(np.min(states)) if lower is None else lower
    hi = float(np.max(states)) if upper is None else upper
    return np.linspace(lo, hi, n_points).reshape(-1, 1)
