"""
亚稳态聚类模块
嵌入空间上的加权 k-means（Lloyd + k-means++ 多次重启）、误分类率 M 与亚稳态得分
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from errors import InvalidInput
from numerics import kmeans_pp_init, min_cost_permutation
from schemas import ClusterModel, MetastabilityScore, PartitionComparison, WeightedPointSet

DEFAULT_MAX_ITER = 300
DEFAULT_RESTARTS = 10


def _nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """最近中心下标，距离相等时取最小下标"""
    return np.argmin(cdist(points, centroids, 'sqeuclidean'), axis=1)


def _objective(points: np.ndarray, weights: np.ndarray, centroids: np.ndarray,
               labels: np.ndarray) -> float:
    return float(np.sum(weights * np.sum((points - centroids[labels]) ** 2, axis=1)))


def _update_centroids(points: np.ndarray, weights: np.ndarray, labels: np.ndarray,
                      centroids: np.ndarray) -> np.ndarray:
    """加权均值更新；没有正权重点的聚类保留原中心"""
    updated = centroids.copy()
    for k in range(centroids.shape[0]):
        mask = labels == k
        mass = weights[mask].sum()
        if mass > 0:
            updated[k] = (weights[mask, None] * points[mask]).sum(axis=0) / mass
    return updated


def _lloyd(points: np.ndarray, weights: np.ndarray, centroids: np.ndarray,
           max_iter: int) -> Tuple[np.ndarray, np.ndarray, List[float], int]:
    labels = _nearest(points, centroids)
    history = [_objective(points, weights, centroids, labels)]
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        centroids = _update_centroids(points, weights, labels, centroids)
        new_labels = _nearest(points, centroids)
        history.append(_objective(points, weights, centroids, new_labels))
        converged = np.array_equal(new_labels, labels)
        labels = new_labels
        if converged:
            break
    return centroids, labels, history, iterations


def weighted_kmeans(pts: WeightedPointSet, m: int, seed: int, max_iter: int = DEFAULT_MAX_ITER,
                    n_restarts: int = DEFAULT_RESTARTS) -> ClusterModel:
    """
    加权 k-means：每次重启用 k-means++ 初始化后做 Lloyd 迭代，
    分配不再变化或达到 max_iter 时停止；取目标函数最小的一次（相等取最早）
    """
    if m < 1:
        raise InvalidInput(f"m 必须 ≥ 1，实际 {m}")
    if max_iter < 1 or n_restarts < 1:
        raise InvalidInput("max_iter 与 n_restarts 必须 ≥ 1")
    n_distinct = pts.n_distinct
    if m > n_distinct:
        raise InvalidInput(f"m={m} 超过互异嵌入点数 {n_distinct}")

    points, weights = pts.points, pts.weights
    children = np.random.SeedSequence(seed).spawn(n_restarts)
    best: Optional[ClusterModel] = None
    for child in children:
        restart_seed = int(child.generate_state(1)[0])
        init = kmeans_pp_init(points, weights, m, restart_seed)
        centroids, labels, history, iterations = _lloyd(points, weights, init, max_iter)
        if best is None or history[-1] < best.objective:
            best = ClusterModel(centroids=centroids, objective=history[-1],
                                iterations_run=iterations, seed=seed,
                                labels=tuple(int(v) for v in labels),
                                objective_history=tuple(history))
    return best


def assign(model: ClusterModel, psi) -> int:
    """最近中心的下标（距离相等取最小下标）"""
    psi = np.asarray(psi, dtype=np.float64).ravel()
    if psi.shape[0] != model.centroids.shape[1]:
        raise InvalidInput(f"嵌入维度应为 {model.centroids.shape[1]}，实际 {psi.shape[0]}")
    return int(_nearest(psi[None, :], model.centroids)[0])


def assign_batch(model: ClusterModel, psis) -> np.ndarray:
    psis = np.asarray(psis, dtype=np.float64)
    if psis.ndim == 1:
        psis = psis.reshape(-1, model.centroids.shape[1])
    if psis.ndim != 2 or psis.shape[1] != model.centroids.shape[1]:
        raise InvalidInput(f"嵌入维度应为 {model.centroids.shape[1]}，实际形状 {psis.shape}")
    return _nearest(psis, model.centroids)


def misclassification(predicted: Sequence[int], reference: Sequence[int],
                      weights: Optional[Sequence[float]] = None,
                      n_classes: Optional[int] = None) -> PartitionComparison:
    """
    误分类率 M = min_σ Σ_j [参考类 j 中未被标为 σ(j) 的权重] / [参考类 j 的权重]
    在 m×m 误分配质量矩阵上用匈牙利算法精确求解
    n_classes 给定时参考类为 0..n_classes−1（缺失类视为空类）
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    reference = np.asarray(reference, dtype=np.int64)
    if predicted.shape != reference.shape or predicted.ndim != 1:
        raise InvalidInput("predicted 与 reference 必须是等长一维标签序列")
    weights = np.ones(len(reference)) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != reference.shape or np.any(weights < 0):
        raise InvalidInput("weights 必须非负且与标签等长")

    ref_classes = (np.arange(n_classes) if n_classes is not None
                   else np.unique(reference))
    m = len(ref_classes)
    masses = np.array([weights[reference == c].sum() for c in ref_classes])
    if m == 0 or np.any(masses <= 0):
        empty = [int(c) for c, w in zip(ref_classes, masses) if w <= 0]
        raise InvalidInput(f"参考类为空（权重为 0）: {empty}")

    pred_classes = list(np.unique(predicted[weights > 0]))
    if len(pred_classes) > m:
        raise InvalidInput(f"预测标签数 {len(pred_classes)} 超过参考类数 {m}")
    next_label = int(max(predicted.max(), m - 1)) + 1
    while len(pred_classes) < m:
        pred_classes.append(next_label)
        next_label += 1

    overlap = np.array([[weights[(reference == c) & (predicted == k)].sum() for k in pred_classes]
                        for c in ref_classes])
    cost = (masses[:, None] - overlap) / masses[:, None]
    permutation, total = min_cost_permutation(cost)
    return PartitionComparison(rate=total,
                               permutation=tuple(int(pred_classes[j]) for j in permutation),
                               reference_labels=tuple(int(c) for c in ref_classes))


def metastability_score(labels: Sequence[int], n_clusters: Optional[int] = None) -> MetastabilityScore:
    """
    亚稳态得分 Σ_k p̂(Ω_k|Ω_k)
    p̂(Ω_k|Ω_k) = 从 k 出发且停留在 k 的相邻对数 / 从 k 出发的相邻对数
    从未出现的聚类记入 missing_clusters；只出现在最后一个样本的聚类没有出发对，
    记入 terminal_clusters，二者都不计入得分
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] < 2:
        raise InvalidInput("标签序列长度必须 ≥ 2")
    clusters = range(n_clusters) if n_clusters is not None else np.unique(labels)
    starts, stays = labels[:-1], labels[:-1] == labels[1:]
    per_cluster = {}
    missing, terminal = [], []
    for k in clusters:
        from_k = starts == k
        count = int(from_k.sum())
        if count == 0:
            (terminal if labels[-1] == k else missing).append(int(k))
            continue
        per_cluster[int(k)] = float(np.sum(stays & from_k)) / count
    return MetastabilityScore(score=float(sum(per_cluster.values())), per_cluster=per_cluster,
                              missing_clusters=tuple(missing), terminal_clusters=tuple(terminal))
