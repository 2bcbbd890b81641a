"""
数据模型定义 - 白盒追踪记录与流水线各阶段的不可变结果记录
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, List, Tuple
import json

import numpy as np

from errors import InvalidInput


def frozen_array(values, name: str = "array", ndim: Optional[int] = None) -> np.ndarray:
    """复制为只读 float64 数组，并拒绝 NaN/Inf"""
    arr = np.array(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInput(f"{name} 维度应为 {ndim}，实际为 {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} 含有非有限值")
    arr.setflags(write=False)
    return arr


def json_safe(value):
    """把 numpy 标量/数组转换为可 JSON 序列化的 Python 对象"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass
class WhiteboxTrace:
    """白盒追踪记录数据类"""
    run_id: str
    timestamp: str
    node: str
    action: str
    decision: str
    reason_code: str
    internal_variables: Dict
    reasoning: str
    n_pairs: Optional[int] = None
    rank: Optional[int] = None
    n_basis: Optional[int] = None
    objective: Optional[float] = None
    error_plain: Optional[float] = None
    error_reshaped: Optional[float] = None
    misclassification: Optional[float] = None
    metastability: Optional[float] = None

    OPTIONAL_FIELDS = ('n_pairs', 'rank', 'n_basis', 'objective', 'error_plain',
                       'error_reshaped', 'misclassification', 'metastability')

    def to_log_line(self) -> str:
        """转换为 JSON 日志行"""
        data = {
            'run_id': self.run_id,
            'timestamp': self.timestamp,
            'node': self.node,
            'action': self.action,
            'decision': self.decision,
            'reason_code': self.reason_code,
            'internal_variables': json_safe(self.internal_variables),
            'reasoning': self.reasoning,
        }

        # 只添加非 None 的字段
        for name in self.OPTIONAL_FIELDS:
            value = getattr(self, name)
            if value is not None:
                data[name] = json_safe(value)

        return json.dumps(data, ensure_ascii=False)


@dataclass(frozen=True)
class SvdResult:
    """薄 SVD 结果：a = u · diag(singular_values) · vᵀ"""
    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.singular_values)


@dataclass(frozen=True)
class Trajectory:
    """等间隔采样的轨迹 X_τ, X_2τ, ..., 形状 T×d"""
    states: np.ndarray
    sample_interval: float
    inner_dt: float
    seed: Optional[int] = None
    burn_in_discarded: int = 0
    x0: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        states = frozen_array(self.states, "states")
        if states.ndim == 1:
            states = frozen_array(states.reshape(-1, 1), "states")
        if states.ndim != 2 or states.shape[0] < 2:
            raise InvalidInput(f"轨迹至少需要 2 个状态，实际形状 {states.shape}")
        if self.sample_interval <= 0 or self.inner_dt <= 0:
            raise InvalidInput("sample_interval 与 inner_dt 必须为正")
        object.__setattr__(self, 'states', states)

    @property
    def length(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def stride(self) -> int:
        return int(round(self.sample_interval / self.inner_dt))


@dataclass(frozen=True)
class ProjectionEstimate:
    """
    投影矩阵估计 P̂ = (1/n) Σ Φ(X_t) Φ̃(X_{t+1})ᵀ
    保存原始求和 pair_sum，使按样本数合并是精确的
    """
    pair_sum: np.ndarray
    pair_count: int
    left_map_id: str
    right_map_id: str

    def __post_init__(self):
        object.__setattr__(self, 'pair_sum', frozen_array(self.pair_sum, "pair_sum", ndim=2))
        if self.pair_count < 1:
            raise InvalidInput("pair_count 必须 ≥ 1")

    @property
    def p_hat(self) -> np.ndarray:
        return self.pair_sum / self.pair_count

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pair_sum.shape

    def to_dict(self) -> Dict:
        return {
            'p_hat': self.p_hat.tolist(),
            'pair_sum': self.pair_sum.tolist(),
            'pair_count': self.pair_count,
            'left_map_id': self.left_map_id,
            'right_map_id': self.right_map_id,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ProjectionEstimate':
        return cls(pair_sum=data['pair_sum'], pair_count=int(data['pair_count']),
                   left_map_id=data['left_map_id'], right_map_id=data['right_map_id'])


@dataclass(frozen=True)
class ReshapedKernelModel:
    """重塑后的核均值嵌入：P̃ = u · diag(sigma) · vᵀ，秩为 rank"""
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    rank: int
    residual_sigma: float
    left_map_id: str
    right_map_id: str
    pair_count: int

    def __post_init__(self):
        object.__setattr__(self, 'u', frozen_array(self.u, "u", ndim=2))
        object.__setattr__(self, 'sigma', frozen_array(self.sigma, "sigma", ndim=1))
        object.__setattr__(self, 'v', frozen_array(self.v, "v", ndim=2))

    @property
    def matrix(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T

    def to_dict(self) -> Dict:
        return {
            'u': self.u.tolist(),
            'sigma': self.sigma.tolist(),
            'v': self.v.tolist(),
            'rank': self.rank,
            'residual_sigma': self.residual_sigma,
            'left_map_id': self.left_map_id,
            'right_map_id': self.right_map_id,
            'pair_count': self.pair_count,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ReshapedKernelModel':
        return cls(u=data['u'], sigma=data['sigma'], v=data['v'], rank=int(data['rank']),
                   residual_sigma=float(data['residual_sigma']),
                   left_map_id=data['left_map_id'], right_map_id=data['right_map_id'],
                   pair_count=int(data['pair_count']))


@dataclass(frozen=True)
class Embedder:
    """
    状态嵌入：Ψ̂(x) = Bᵀ Φ(x)
    B = C^{-1/2} Û Σ̂_{[1..r]}，D = C̃^{-1/2} V̂
    """
    left_factor: np.ndarray
    right_factor: np.ndarray
    singular_values: np.ndarray
    rank: int
    left_map_id: str
    right_map_id: str

    def __post_init__(self):
        object.__setattr__(self, 'left_factor', frozen_array(self.left_factor, "left_factor", ndim=2))
        object.__setattr__(self, 'right_factor', frozen_array(self.right_factor, "right_factor", ndim=2))
        object.__setattr__(self, 'singular_values',
                           frozen_array(self.singular_values, "singular_values", ndim=1))
        if self.left_factor.shape[1] != self.rank or self.right_factor.shape[1] != self.rank:
            raise InvalidInput("因子列数必须等于 rank")

    def to_dict(self) -> Dict:
        return {
            'left_factor': self.left_factor.tolist(),
            'right_factor': self.right_factor.tolist(),
            'singular_values': self.singular_values.tolist(),
            'rank': self.rank,
            'left_map_id': self.left_map_id,
            'right_map_id': self.right_map_id,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Embedder':
        return cls(left_factor=data['left_factor'], right_factor=data['right_factor'],
                   singular_values=data['singular_values'], rank=int(data['rank']),
                   left_map_id=data['left_map_id'], right_map_id=data['right_map_id'])


@dataclass(frozen=True)
class WeightedPointSet:
    """带权点集：points n×r，weights ≥ 0 且总和为正"""
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        points = frozen_array(points, "points", ndim=2)
        weights = frozen_array(self.weights, "weights", ndim=1)
        if weights.shape[0] != points.shape[0]:
            raise InvalidInput(f"权重长度 {weights.shape[0]} 与点数 {points.shape[0]} 不一致")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise InvalidInput("权重必须非负且总和为正")
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def uniform(cls, points) -> 'WeightedPointSet':
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        return cls(points=points, weights=np.full(n, 1.0 / n))

    @property
    def n_distinct(self) -> int:
        """正权重点中互不相同的点数"""
        support = self.points[self.weights > 0]
        return int(np.unique(support, axis=0).shape[0])


@dataclass(frozen=True)
class ClusterModel:
    """k-means 结果：m 个中心、目标函数值及逐轮目标函数历史"""
    centroids: np.ndarray
    objective: float
    iterations_run: int
    seed: int
    labels: Tuple[int, ...] = ()
    objective_history: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'centroids', frozen_array(self.centroids, "centroids", ndim=2))

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def to_dict(self) -> Dict:
        return {
            'centroids': self.centroids.tolist(),
            'objective': self.objective,
            'iterations_run': self.iterations_run,
            'seed': self.seed,
            'objective_history': list(self.objective_history),
        }


@dataclass(frozen=True)
class PartitionComparison:
    """误分类率 M 及使其最小的置换 σ（参考类 j → 预测标签 permutation[j]）"""
    rate: float
    permutation: Tuple[int, ...]
    reference_labels: Tuple[int, ...] = ()

    def to_dict(self) -> Dict:
        return {
            'rate': self.rate,
            'permutation': {str(ref): int(pred) for ref, pred in
                            zip(self.reference_labels, self.permutation)},
        }


@dataclass(frozen=True)
class MetastabilityScore:
    """
    亚稳态得分 Σ_k p̂(Ω_k|Ω_k)
    missing_clusters: 从未出现的聚类；terminal_clusters: 只出现在最后一个样本、没有出发对的聚类
    complete=False 表示有聚类未被访问
    """
    score: float
    per_cluster: Dict[int, float] = field(default_factory=dict)
    missing_clusters: Tuple[int, ...] = ()
    terminal_clusters: Tuple[int, ...] = ()

    @property
    def complete(self) -> bool:
        return not self.missing_clusters

    def to_dict(self) -> Dict:
        return {
            'score': self.score,
            'per_cluster': {str(k): v for k, v in self.per_cluster.items()},
            'missing_clusters': list(self.missing_clusters),
            'terminal_clusters': list(self.terminal_clusters),
            'complete': self.complete,
        }
