"""
参考真值模块
有限状态链（示性特征下的精确 P*、行距离）与连续基准的稠密求积参考 P*
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple
import hashlib

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist
from scipy.stats import norm

from errors import InvalidInput
from features import FeatureMap, as_states
from schemas import ProjectionEstimate, frozen_array
from simulator import PotentialSpec, simulate
import estimator

STOCHASTIC_TOLERANCE = 1e-12
STATIONARY_TOLERANCE = 1e-12
POWER_ITERATION_LIMIT = 1_000_000
DEFAULT_GRID_POINTS = 401


def _check_stochastic(transition: np.ndarray):
    if transition.ndim != 2 or transition.shape[0] != transition.shape[1] or transition.shape[0] < 1:
        raise InvalidInput(f"转移矩阵必须是非空方阵，实际形状 {transition.shape}")
    if np.any(transition < 0):
        raise InvalidInput("转移矩阵元素必须非负")
    if np.max(np.abs(transition.sum(axis=1) - 1.0)) > STOCHASTIC_TOLERANCE:
        raise InvalidInput("转移矩阵每行之和必须为 1")


def stationary_distribution(transition, tol: float = STATIONARY_TOLERANCE) -> np.ndarray:
    """
    平稳分布 π T = π
    先对 Tᵀ 做稠密特征分解取特征值 1 的特征向量，残差不达标时退回幂迭代
    """
    transition = np.asarray(transition, dtype=np.float64)
    _check_stochastic(transition)
    vals, vecs = scipy.linalg.eig(transition.T)
    vec = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    pi = np.abs(vec) / np.abs(vec).sum()
    if np.max(np.abs(pi @ transition - pi)) <= 100 * tol:
        return pi

    pi = np.full(transition.shape[0], 1.0 / transition.shape[0])
    for _ in range(POWER_ITERATION_LIMIT):
        updated = pi @ transition
        updated /= updated.sum()
        if np.max(np.abs(updated - pi)) <= tol:
            return updated
        pi = updated
    return pi


@dataclass(frozen=True)
class FiniteChain:
    """有限状态马尔可夫链：随机矩阵 T 与平稳分布 π"""
    transition: np.ndarray
    stationary: Optional[np.ndarray] = None

    def __post_init__(self):
        transition = frozen_array(self.transition, "transition", ndim=2)
        _check_stochastic(transition)
        stationary = (stationary_distribution(transition) if self.stationary is None
                      else np.asarray(self.stationary, dtype=np.float64))
        stationary = frozen_array(stationary, "stationary", ndim=1)
        if stationary.shape[0] != transition.shape[0] or np.any(stationary < 0):
            raise InvalidInput("平稳分布必须是与状态数等长的概率向量")
        object.__setattr__(self, 'transition', transition)
        object.__setattr__(self, 'stationary', stationary)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def to_dict(self) -> Dict:
        return {'transition': self.transition.tolist(), 'stationary': self.stationary.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> 'FiniteChain':
        return cls(transition=data['transition'], stationary=data.get('stationary'))

    def sample_path(self, n_steps: int, seed: int, start: Optional[int] = None) -> np.ndarray:
        """按转移矩阵采样状态序列（起点默认从 π 抽取）"""
        rng = np.random.default_rng(seed)
        cumulative = np.cumsum(self.transition, axis=1)
        cumulative[:, -1] = 1.0
        state = int(rng.choice(self.n_states, p=self.stationary)) if start is None else int(start)
        uniforms = rng.random(n_steps - 1)
        path = np.empty(n_steps, dtype=np.int64)
        path[0] = state
        for t, u in enumerate(uniforms, start=1):
            state = int(np.searchsorted(cumulative[state], u, side='right'))
            path[t] = state
        return path


def chain_projection(chain: FiniteChain) -> np.ndarray:
    """示性特征与计数测度下的 P*_{ij} = π_i T_{ij}"""
    return chain.stationary[:, None] * chain.transition


def chain_diffusion_distances(chain: FiniteChain) -> np.ndarray:
    """(i, j) 元素为 ‖T_{i,:} − T_{j,:}‖₂"""
    return cdist(chain.transition, chain.transition)


@dataclass(frozen=True)
class IndicatorFeatureMap(FeatureMap):
    """
    有限状态示性特征 Φ(i) = e_i，状态以 0..S−1 的实数编码
    左侧 ρ = π（L²(π) 范数），右侧 ρ = 1（计数测度）
    """
    n_states: int
    rho: Tuple[float, ...] = ()
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        rho = np.asarray(self.rho if self.rho else np.ones(self.n_states), dtype=np.float64)
        if rho.shape != (self.n_states,) or np.any(rho <= 0):
            raise InvalidInput("示性特征的 ρ 必须为正且长度等于状态数")
        object.__setattr__(self, 'rho', tuple(float(v) for v in rho))

    @property
    def norms(self) -> np.ndarray:
        return np.asarray(self.rho)

    @property
    def map_id(self) -> str:
        digest = hashlib.sha256(np.asarray(self.rho).tobytes()).hexdigest()[:12]
        return f"indicator-{self.n_states}-{digest}"

    def evaluate(self, x) -> np.ndarray:
        states, single = as_states(x, 1)
        index = np.rint(states[:, 0]).astype(np.int64)
        if np.any(np.abs(states[:, 0] - index) > 0) or np.any(index < 0) or np.any(index >= self.n_states):
            raise InvalidInput(f"状态必须是 0..{self.n_states - 1} 的整数编码")
        values = np.zeros((index.shape[0], self.n_states))
        values[np.arange(index.shape[0]), index] = 1.0
        return values[0] if single else values


def chain_feature_maps(chain: FiniteChain) -> Tuple[IndicatorFeatureMap, IndicatorFeatureMap]:
    """有限链的 (左, 右) 示性特征"""
    return (IndicatorFeatureMap(chain.n_states, tuple(chain.stationary)),
            IndicatorFeatureMap(chain.n_states))


def chain_estimate(chain: FiniteChain, left: IndicatorFeatureMap,
                   right: IndicatorFeatureMap) -> ProjectionEstimate:
    """把精确 P* 包装为 ProjectionEstimate，便于走完整流水线"""
    return ProjectionEstimate(pair_sum=chain_projection(chain), pair_count=1,
                              left_map_id=left.map_id, right_map_id=right.map_id)


@dataclass(frozen=True)
class QuadratureGrid:
    """
    求积网格：节点、正权重与区域盒
    trapezoid: 一维复合梯形公式，权重和等于区间长度
    counting: 有限状态计数测度，权重全为 1
    """
    nodes: np.ndarray
    weights: np.ndarray
    lower: float
    upper: float
    rule: str = 'trapezoid'

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        nodes = frozen_array(nodes.reshape(-1, 1) if nodes.ndim == 1 else nodes, "nodes", ndim=2)
        weights = frozen_array(self.weights, "weights", ndim=1)
        if weights.shape[0] != nodes.shape[0] or np.any(weights <= 0):
            raise InvalidInput("求积权重必须为正且与节点数一致")
        object.__setattr__(self, 'nodes', nodes)
        object.__setattr__(self, 'weights', weights)

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def coarsen(self) -> Optional['QuadratureGrid']:
        """隔点取样得到半分辨率网格；节点数为偶数或过少时返回 None"""
        if self.rule != 'trapezoid' or self.n_nodes < 5 or self.n_nodes % 2 == 0:
            return None
        return trapezoid_grid(self.lower, self.upper, (self.n_nodes + 1) // 2)


def trapezoid_grid(lower: float, upper: float, n_points: int = DEFAULT_GRID_POINTS) -> QuadratureGrid:
    if not upper > lower or n_points < 2:
        raise InvalidInput("需要 upper > lower 且 n_points ≥ 2")
    nodes = np.linspace(lower, upper, n_points)
    h = (upper - lower) / (n_points - 1)
    weights = np.full(n_points, h)
    weights[[0, -1]] = h / 2.0
    return QuadratureGrid(nodes=nodes, weights=weights, lower=lower, upper=upper, rule='trapezoid')


def counting_grid(n_states: int) -> QuadratureGrid:
    return QuadratureGrid(nodes=np.arange(n_states, dtype=np.float64), weights=np.ones(n_states),
                          lower=0.0, upper=float(n_states - 1), rule='counting')


class TransitionKernel:
    """转移核基类 - 在网格上给出 π(u) 与 p(v|u)"""

    def tabulate(self, grid: QuadratureGrid) -> Tuple[np.ndarray, np.ndarray]:
        """
        在网格上制表
        返回: (π(u) 向量, p(v|u) 矩阵，行为 u、列为 v)
        """
        raise NotImplementedError("子类必须实现 tabulate 方法")


class FiniteChainKernel(TransitionKernel):
    """有限链在计数网格上的核"""

    def __init__(self, chain: FiniteChain):
        self.chain = chain

    def tabulate(self, grid: QuadratureGrid) -> Tuple[np.ndarray, np.ndarray]:
        index = np.rint(grid.nodes[:, 0]).astype(np.int64)
        return self.chain.stationary[index], self.chain.transition[np.ix_(index, index)]


class IndependentKernel(TransitionKernel):
    """p(v|u) = π(v)，π 为一维高斯密度（秩 1 检验用）"""

    def __init__(self, mean: float = 0.0, std: float = 1.0):
        if not std > 0:
            raise InvalidInput("std 必须为正")
        self.mean = mean
        self.std = std

    def tabulate(self, grid: QuadratureGrid) -> Tuple[np.ndarray, np.ndarray]:
        pi = norm.pdf(grid.nodes[:, 0], loc=self.mean, scale=self.std)
        return pi, np.tile(pi, (grid.n_nodes, 1))


class EulerGridKernel(TransitionKernel):
    """
    Euler 格式一步高斯核 N(v; u − V'(u)dt, 2dt) 在网格上离散化，
    行归一化后复合 stride 次得到间隔 τ 的转移核；π 由离散链的平稳分布给出
    """

    def __init__(self, spec: PotentialSpec, inner_dt: float, stride: int):
        if spec.dim != 1:
            raise InvalidInput("Euler 网格核只支持一维势函数")
        if not inner_dt > 0 or stride < 1:
            raise InvalidInput("需要 inner_dt > 0 且 stride ≥ 1")
        self.spec = spec
        self.inner_dt = inner_dt
        self.stride = stride

    def step_matrix(self, grid: QuadratureGrid) -> np.ndarray:
        """单步离散转移矩阵 M[u, v] ∝ q(v|u)·w_v（行和为 1）"""
        u = grid.nodes[:, 0]
        drift = u - self.spec.gradient(grid.nodes)[:, 0] * self.inner_dt
        density = norm.pdf(u[None, :], loc=drift[:, None], scale=np.sqrt(2.0 * self.inner_dt))
        mass = density * grid.weights[None, :]
        rows = mass.sum(axis=1, keepdims=True)
        if not np.all(np.isfinite(mass)) or np.any(rows <= 0):
            raise InvalidInput("Euler 核在网格上出现非有限值或空行（网格过窄）")
        return mass / rows

    def tabulate(self, grid: QuadratureGrid) -> Tuple[np.ndarray, np.ndarray]:
        step = self.step_matrix(grid)
        composed = np.linalg.matrix_power(step, self.stride)
        probabilities = stationary_distribution(step)
        return probabilities / grid.weights, composed / grid.weights[None, :]


def _grid_projection(kernel: TransitionKernel, grid: QuadratureGrid, left, right) -> np.ndarray:
    pi, density = kernel.tabulate(grid)
    if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(density))):
        raise InvalidInput("转移核在网格上出现非有限值")
    phi = np.atleast_2d(left.evaluate(grid.nodes))
    psi = np.atleast_2d(right.evaluate(grid.nodes))
    joint = (grid.weights * pi)[:, None] * density * grid.weights[None, :]
    return phi.T @ joint @ psi


def quadrature_projection(kernel: TransitionKernel, grid: QuadratureGrid, left, right,
                          refine: bool = True) -> Tuple[np.ndarray, Optional[float]]:
    """
    P* ≈ Σ_{u,v} w_u w_v π(u) p(v|u) Φ(u) Φ̃(v)ᵀ
    返回: (P*, 与半分辨率网格的 Frobenius 差；无法粗化时为 None)
    """
    projection = _grid_projection(kernel, grid, left, right)
    refinement_error = None
    coarse = grid.coarsen() if refine else None
    if coarse is not None:
        coarse_projection = _grid_projection(kernel, coarse, left, right)
        refinement_error = float(np.linalg.norm(projection - coarse_projection, 'fro'))
    return projection, refinement_error


def long_run_projection(spec: PotentialSpec, left, right, n_ref: int, inner_dt: float,
                        stride: int, burn_in: int, seed: int, x0=None) -> ProjectionEstimate:
    """长轨迹经验估计，n_ref 个转移对视为真值"""
    x0 = np.zeros(spec.dim) if x0 is None else x0
    traj = simulate(spec, x0, inner_dt=inner_dt, n_samples=n_ref + 1, stride=stride,
                    burn_in=burn_in, seed=seed)
    return estimator.accumulate(traj, left, right)


def random_lowrank_chain(n_states: int, rank: int, seed: int) -> FiniteChain:
    """T = A·B，A 为 S×r 行随机矩阵，B 为 r×S 随机矩阵，故 rank(T) ≤ r"""
    if not 1 <= rank <= n_states:
        raise InvalidInput(f"需要 1 ≤ r ≤ S，实际 r={rank}, S={n_states}")
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(rank), size=n_states)
    b = rng.dirichlet(np.ones(n_states), size=rank)
    transition = a @ b
    transition /= transition.sum(axis=1, keepdims=True)
    return FiniteChain(transition=transition)
