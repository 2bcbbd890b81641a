"""
数值基础模块
稠密线性代数（SVD、对称特征分解）与组合优化（最小代价匹配、k-means++ 初始化）
所有函数都是输入的纯函数，结果只读
"""
from typing import Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from errors import InvalidInput
from schemas import SvdResult, frozen_array

SYMMETRY_TOLERANCE = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """转换为二维 float64 矩阵并检查有限性"""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInput(f"{name} 必须是二维矩阵，实际维度 {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} 含有 NaN/Inf")
    return arr


def _fix_column_signs(left: np.ndarray, right: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """符号约定：left 每列绝对值最大的元素为正，right 同步翻转"""
    if left.shape[1] == 0:
        return left, right
    pivots = np.argmax(np.abs(left), axis=0)
    signs = np.sign(left[pivots, np.arange(left.shape[1])])
    signs[signs == 0] = 1.0
    return left * signs, right * signs


def thin_svd(a) -> SvdResult:
    """
    薄 SVD：a = U · diag(σ) · Vᵀ
    σ 降序，U、V 列正交；列符号按 U 列最大元为正固定
    """
    a = as_matrix(a, "a")
    if min(a.shape) < 1:
        raise InvalidInput(f"SVD 需要 min(rows, cols) ≥ 1，实际形状 {a.shape}")
    u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver='gesdd')
    u, v = _fix_column_signs(u, vt.T)
    return SvdResult(u=frozen_array(u, "u"),
                     singular_values=frozen_array(s, "singular_values"),
                     v=frozen_array(v, "v"))


def truncation_error(a, r: int) -> float:
    """‖a − a_r‖₂ = σ_{r+1}(a)（r 达到满秩时为 0）"""
    s = thin_svd(a).singular_values
    return float(s[r]) if r < len(s) else 0.0


def sym_eig(a) -> Tuple[np.ndarray, np.ndarray]:
    """
    对称矩阵特征分解，特征值降序
    返回: (特征值, 特征向量矩阵（列为特征向量）)
    """
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise InvalidInput(f"特征分解需要方阵，实际形状 {a.shape}")
    scale = max(np.linalg.norm(a), 1.0)
    if np.linalg.norm(a - a.T) > SYMMETRY_TOLERANCE * scale:
        raise InvalidInput("矩阵不对称（超出 1e-10 相对容差）")
    vals, vecs = scipy.linalg.eigh(0.5 * (a + a.T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    vecs, _ = _fix_column_signs(vecs, vecs)
    return frozen_array(vals, "eigenvalues"), frozen_array(vecs, "eigenvectors")


def min_cost_permutation(cost) -> Tuple[Tuple[int, ...], float]:
    """
    匈牙利算法求精确最小代价置换
    返回: (σ，σ[i] 为第 i 行匹配的列, 总代价 Σ cost[i, σ(i)])
    """
    cost = as_matrix(cost, "cost")
    if cost.shape[0] != cost.shape[1] or cost.shape[0] < 1:
        raise InvalidInput(f"代价矩阵必须是非空方阵，实际形状 {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    permutation = tuple(int(c) for c in cols[np.argsort(rows)])
    total = float(cost[np.arange(len(permutation)), list(permutation)].sum())
    return permutation, total


def kmeans_pp_init(points, weights, m: int, seed: int) -> np.ndarray:
    """
    加权 D² 采样（k-means++）选取 m 个互不相同的初始中心
    首个中心按权重采样，其后按 w·D² 采样；固定 seed 结果逐位一致
    """
    points = as_matrix(np.asarray(points, dtype=np.float64).reshape(len(points), -1), "points")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (points.shape[0],) or np.any(weights < 0) or weights.sum() <= 0:
        raise InvalidInput("权重必须与点数一致、非负且不全为零")
    if m < 1:
        raise InvalidInput("m 必须 ≥ 1")
    n_distinct = np.unique(points[weights > 0], axis=0).shape[0]
    if m > n_distinct:
        raise InvalidInput(f"m={m} 超过正权重互异点数 {n_distinct}")

    rng = np.random.default_rng(seed)
    centers = np.empty((m, points.shape[1]))
    first = rng.choice(points.shape[0], p=weights / weights.sum())
    centers[0] = points[first]
    min_sq = np.sum((points - centers[0]) ** 2, axis=1)

    for i in range(1, m):
        mass = weights * min_sq
        next_index = rng.choice(points.shape[0], p=mass / mass.sum())
        centers[i] = points[next_index]
        min_sq = np.minimum(min_sq, np.sum((points - centers[i]) ** 2, axis=1))

    return centers
