"""
投影矩阵估计模块
从转移对累加 P̂ = (1/n) Σ Φ(X_t) Φ̃(X_{t+1})ᵀ，秩 r 截断得到重塑 KME P̃
"""
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InvalidInput
from numerics import as_matrix, thin_svd
from schemas import ProjectionEstimate, ReshapedKernelModel, Trajectory

CHUNK_SIZE = 4096


def _state_blocks(traj) -> List[np.ndarray]:
    """单条轨迹 / 轨迹序列 / 状态数组 统一为状态矩阵列表，轨迹之间不成对"""
    if isinstance(traj, Trajectory):
        return [np.asarray(traj.states)]
    if isinstance(traj, (list, tuple)) and traj and all(isinstance(t, Trajectory) for t in traj):
        return [np.asarray(t.states) for t in traj]
    states = np.asarray(traj, dtype=np.float64)
    if states.ndim == 1:
        states = states.reshape(-1, 1)
    if states.ndim != 2:
        raise InvalidInput(f"轨迹状态必须是 T×d 矩阵，实际形状 {states.shape}")
    return [states]


def _features(feature_map, states: np.ndarray) -> np.ndarray:
    return np.atleast_2d(feature_map.evaluate(states))


def pair_sum(states: np.ndarray, left, right, chunk_size: int = CHUNK_SIZE) -> np.ndarray:
    """Σ_t Φ(X_t) Φ̃(X_{t+1})ᵀ，按固定分块大小计算局部和并按下标顺序相加"""
    n_pairs = states.shape[0] - 1
    total = None
    for start in range(0, n_pairs, chunk_size):
        stop = min(start + chunk_size, n_pairs)
        phi = _features(left, states[start:stop])
        psi = _features(right, states[start + 1:stop + 1])
        partial = phi.T @ psi
        total = partial if total is None else total + partial
    return total


def accumulate(traj: Union[Trajectory, Sequence[Trajectory], np.ndarray], left, right,
               chunk_size: int = CHUNK_SIZE) -> ProjectionEstimate:
    """
    累加投影矩阵估计
    长度 T 的轨迹给出 n = T−1 个转移对；多条轨迹按转移对数加权合并
    """
    if chunk_size < 1:
        raise InvalidInput("chunk_size 必须 ≥ 1")
    blocks = _state_blocks(traj)
    estimate: Optional[ProjectionEstimate] = None
    for states in blocks:
        if states.shape[0] < 2:
            raise InvalidInput(f"轨迹长度必须 ≥ 2，实际 {states.shape[0]}")
        if states.shape[1] != left.dim or states.shape[1] != right.dim:
            raise InvalidInput(f"状态维度 {states.shape[1]} 与特征映射输入维度不一致")
        if not np.all(np.isfinite(states)):
            raise InvalidInput("轨迹含有 NaN/Inf")
        part = ProjectionEstimate(pair_sum=pair_sum(states, left, right, chunk_size),
                                  pair_count=states.shape[0] - 1,
                                  left_map_id=left.map_id, right_map_id=right.map_id)
        estimate = part if estimate is None else merge(estimate, part)
    return estimate


def merge(a: ProjectionEstimate, b: ProjectionEstimate) -> ProjectionEstimate:
    """按转移对数加权合并两个估计（等价于拼接转移对集合）"""
    if (a.left_map_id, a.right_map_id) != (b.left_map_id, b.right_map_id):
        raise InvalidInput("合并的估计必须使用相同的特征映射")
    if a.shape != b.shape:
        raise InvalidInput(f"估计形状不一致: {a.shape} vs {b.shape}")
    return ProjectionEstimate(pair_sum=a.pair_sum + b.pair_sum,
                              pair_count=a.pair_count + b.pair_count,
                              left_map_id=a.left_map_id, right_map_id=a.right_map_id)


def reshape(est: ProjectionEstimate, r: int) -> ReshapedKernelModel:
    """
    KME 重塑：保留 P̂ 的前 r 个奇异三元组
    residual_sigma = σ_{r+1}(P̂)，r 达到满秩时为 0
    """
    max_rank = min(est.shape)
    if not 1 <= r <= max_rank:
        raise InvalidInput(f"rank 必须在 [1, {max_rank}] 内，实际 {r}")
    svd = thin_svd(est.p_hat)
    residual = float(svd.singular_values[r]) if r < svd.rank else 0.0
    return ReshapedKernelModel(u=svd.u[:, :r], sigma=svd.singular_values[:r], v=svd.v[:, :r],
                               rank=r, residual_sigma=residual,
                               left_map_id=est.left_map_id, right_map_id=est.right_map_id,
                               pair_count=est.pair_count)


def _kernel_matrix(model) -> Tuple[np.ndarray, str, str]:
    if isinstance(model, ReshapedKernelModel):
        return model.matrix, model.left_map_id, model.right_map_id
    if isinstance(model, ProjectionEstimate):
        return model.p_hat, model.left_map_id, model.right_map_id
    raise InvalidInput(f"不支持的模型类型: {type(model).__name__}")


def kme_evaluate(model: Union[ReshapedKernelModel, ProjectionEstimate], left, right, x, y):
    """
    μ̂_p(x, y) = Φ(x)ᵀ P Φ̃(y)
    重塑模型使用 P̃，ProjectionEstimate 使用 P̂（plain KME）
    批量输入时 x、y 逐对计算
    """
    matrix, left_id, right_id = _kernel_matrix(model)
    if left_id != left.map_id or right_id != right.map_id:
        raise InvalidInput(f"模型特征映射 ({left_id}, {right_id}) 与传入映射 "
                           f"({left.map_id}, {right.map_id}) 不一致")
    single = np.ndim(x) <= 1 and np.ndim(y) <= 1
    phi = _features(left, x)
    psi = _features(right, y)
    if phi.shape[0] != psi.shape[0]:
        raise InvalidInput("x 与 y 的状态数不一致")
    values = np.einsum('ij,jk,ik->i', phi, matrix, psi)
    return float(values[0]) if single and values.shape[0] == 1 else values


def embedding_error(model, reference) -> float:
    """‖M − reference‖_F，M 为 P̃（重塑）或 P̂（plain）"""
    if isinstance(model, (ReshapedKernelModel, ProjectionEstimate)):
        matrix = _kernel_matrix(model)[0]
    else:
        matrix = as_matrix(model, "model")
    reference = as_matrix(reference, "reference")
    if matrix.shape != reference.shape:
        raise InvalidInput(f"形状不一致: {matrix.shape} vs {reference.shape}")
    return float(np.linalg.norm(matrix - reference, 'fro'))


def suggest_rank(singular_values) -> Tuple[int, float]:
    """
    谱间隙建议：返回使 σ_k/σ_{k+1} 最大的 k 及该比值
    只作报告，不会自动采用
    """
    s = np.asarray(singular_values, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] < 2:
        raise InvalidInput("至少需要两个奇异值才能计算谱间隙")
    head, tail = s[:-1], s[1:]
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(tail > 0, head / np.where(tail > 0, tail, 1.0),
                          np.where(head > 0, np.inf, 1.0))
    k = int(np.argmax(ratios))
    return k + 1, float(ratios[k])
