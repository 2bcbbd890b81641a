"""
特征模块
高斯核的随机傅里叶特征（RFF），以及按经验测度 / 包围盒均匀测度的正交化，
得到基 Φ、Φ̃ 与范数对角阵 C = diag(ρ)、C̃ = diag(ρ̃)
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import hashlib
import json

import numpy as np

from errors import InvalidInput, DegenerateFeatures
from numerics import sym_eig
from schemas import frozen_array

DEFAULT_DROP_TOL = 1e-8
QUADRATURE_PER_FEATURE = 20
BOX_PADDING = 0.1
GRAM_CHUNK = 4096


def as_states(x, dim: int) -> Tuple[np.ndarray, bool]:
    """
    把单个状态 (d,) 或批量状态 (k, d) 统一为 (k, d)
    返回: (状态矩阵, 是否为单个状态)
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim <= 1
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.shape[0] == dim else arr.reshape(-1, 1)
        single = arr.shape[0] == 1
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidInput(f"状态维度应为 {dim}，实际形状 {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("状态含有 NaN/Inf")
    return arr, single


@dataclass(frozen=True)
class GaussianKernelSpec:
    """高斯核 K(x,y) = exp(−‖x−y‖²/2σ²)，normalized=True 时乘以 (2πσ²)^{-d/2}"""
    bandwidth: float
    dim: int
    normalized: bool = False

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidInput(f"bandwidth 必须为正，实际 {self.bandwidth}")
        if self.dim < 1:
            raise InvalidInput(f"dim 必须 ≥ 1，实际 {self.dim}")

    @property
    def amplitude(self) -> float:
        """特征幅度 = 核归一化常数的平方根"""
        if not self.normalized:
            return 1.0
        return float((2.0 * np.pi * self.bandwidth ** 2) ** (-self.dim / 4.0))

    def evaluate(self, x, y) -> np.ndarray:
        xs, _ = as_states(x, self.dim)
        ys, _ = as_states(y, self.dim)
        sq = np.sum((xs - ys) ** 2, axis=1)
        return self.amplitude ** 2 * np.exp(-sq / (2.0 * self.bandwidth ** 2))

    def to_dict(self) -> Dict:
        return {'bandwidth': self.bandwidth, 'dim': self.dim, 'normalized': self.normalized}

    @classmethod
    def from_dict(cls, data: Dict) -> 'GaussianKernelSpec':
        return cls(bandwidth=float(data['bandwidth']), dim=int(data['dim']),
                   normalized=bool(data.get('normalized', False)))


class FeatureMap:
    """特征映射基类 - Φ: Ω → ℝ^J，附带正交范数 ρ 与内容标识"""

    dim: int

    def evaluate(self, x) -> np.ndarray:
        """
        计算特征
        单个状态返回 (J,)，批量状态返回 (k, J)
        """
        raise NotImplementedError("子类必须实现 evaluate 方法")

    @property
    def norms(self) -> np.ndarray:
        raise NotImplementedError("子类必须实现 norms")

    @property
    def map_id(self) -> str:
        raise NotImplementedError("子类必须实现 map_id")

    @property
    def n_basis(self) -> int:
        return len(self.norms)


@dataclass(frozen=True)
class RawFeatureMap:
    """随机傅里叶特征 h_i(x) = √(2/N)·cos(w_i·x + b_i)"""
    spec: GaussianKernelSpec
    frequencies: np.ndarray
    phases: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, 'frequencies', frozen_array(self.frequencies, "frequencies", ndim=2))
        object.__setattr__(self, 'phases', frozen_array(self.phases, "phases", ndim=1))
        if self.frequencies.shape[0] < 1 or self.frequencies.shape[0] != self.phases.shape[0]:
            raise InvalidInput("frequencies 行数必须 ≥ 1 且与 phases 长度一致")
        if self.frequencies.shape[1] != self.spec.dim:
            raise InvalidInput("frequencies 列数必须等于核的输入维度")

    @property
    def n_features(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 / self.n_features))

    def evaluate(self, x) -> np.ndarray:
        states, single = as_states(x, self.dim)
        values = (self.spec.amplitude * self.scale) * np.cos(states @ self.frequencies.T + self.phases)
        return values[0] if single else values


def sample_rff(spec: GaussianKernelSpec, n_features: int, seed: int) -> RawFeatureMap:
    """从高斯核谱密度 N(0, σ⁻²I) 采样频率，相位均匀分布于 [0, 2π)"""
    if n_features < 1:
        raise InvalidInput(f"n_features 必须 ≥ 1，实际 {n_features}")
    rng = np.random.default_rng(seed)
    frequencies = rng.standard_normal((n_features, spec.dim)) / spec.bandwidth
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    return RawFeatureMap(spec=spec, frequencies=frequencies, phases=phases, seed=int(seed))


def evaluate_raw(feature_map: RawFeatureMap, x) -> np.ndarray:
    return feature_map.evaluate(x)


@dataclass(frozen=True)
class MeasureDescriptor:
    """
    正交化所用测度
    empirical: 轨迹经验测度（L²(π) 的蒙特卡洛近似），体积 1
    uniform_box: 包围盒上的 Lebesgue 测度（L² 的蒙特卡洛近似），体积为盒子体积
    """
    kind: str
    n_samples: int
    lower: Optional[Tuple[float, ...]] = None
    upper: Optional[Tuple[float, ...]] = None

    @property
    def volume(self) -> float:
        if self.kind == 'uniform_box':
            return float(np.prod(np.subtract(self.upper, self.lower)))
        return 1.0

    def to_dict(self) -> Dict:
        return {'kind': self.kind, 'n_samples': self.n_samples,
                'lower': None if self.lower is None else list(self.lower),
                'upper': None if self.upper is None else list(self.upper)}

    @classmethod
    def from_dict(cls, data: Dict) -> 'MeasureDescriptor':
        lower = data.get('lower')
        upper = data.get('upper')
        return cls(kind=data['kind'], n_samples=int(data['n_samples']),
                   lower=None if lower is None else tuple(lower),
                   upper=None if upper is None else tuple(upper))


@dataclass(frozen=True)
class OrthoFeatureMap(FeatureMap):
    """正交特征 Φ(x) = transform · h(x)，Gram 在所声明测度下为 diag(ρ)"""
    raw: RawFeatureMap
    transform: np.ndarray
    rho: np.ndarray
    measure: MeasureDescriptor
    quadrature_seed: Optional[int] = None
    drop_tol: float = DEFAULT_DROP_TOL

    def __post_init__(self):
        transform = frozen_array(self.transform, "transform", ndim=2)
        rho = frozen_array(self.rho, "rho", ndim=1)
        if transform.shape != (rho.shape[0], self.raw.n_features):
            raise InvalidInput(f"transform 形状 {transform.shape} 与 ρ/原始特征数不一致")
        if np.any(rho <= 0) or np.any(np.diff(rho) > 0):
            raise InvalidInput("ρ 必须严格为正且非增")
        object.__setattr__(self, 'transform', transform)
        object.__setattr__(self, 'rho', rho)

    @property
    def dim(self) -> int:
        return self.raw.dim

    @property
    def norms(self) -> np.ndarray:
        return self.rho

    @property
    def map_id(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps(self.raw.spec.to_dict(), sort_keys=True).encode())
        digest.update(f"{self.raw.seed}:{self.raw.n_features}:{self.measure.kind}".encode())
        digest.update(self.transform.tobytes())
        digest.update(self.rho.tobytes())
        return digest.hexdigest()[:16]

    def evaluate(self, x) -> np.ndarray:
        return self.raw.evaluate(x) @ self.transform.T

    def to_dict(self) -> Dict:
        return {
            'map_id': self.map_id,
            'spec': self.raw.spec.to_dict(),
            'seed': self.raw.seed,
            'n_features': self.raw.n_features,
            'transform': self.transform.tolist(),
            'rho': self.rho.tolist(),
            'measure': self.measure.to_dict(),
            'quadrature_seed': self.quadrature_seed,
            'drop_tol': self.drop_tol,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'OrthoFeatureMap':
        raw = sample_rff(GaussianKernelSpec.from_dict(data['spec']), int(data['n_features']),
                         int(data['seed']))
        return cls(raw=raw, transform=data['transform'], rho=data['rho'],
                   measure=MeasureDescriptor.from_dict(data['measure']),
                   quadrature_seed=data.get('quadrature_seed'),
                   drop_tol=float(data.get('drop_tol', DEFAULT_DROP_TOL)))


@dataclass(frozen=True)
class IdentityFeatureMap(FeatureMap):
    """恒等特征 Φ(x) = x（ρ 由调用方声明），用于小规模算例"""
    dim: int
    rho: Tuple[float, ...] = ()

    @property
    def norms(self) -> np.ndarray:
        return np.asarray(self.rho if self.rho else np.ones(self.dim), dtype=np.float64)

    @property
    def map_id(self) -> str:
        norms = self.norms
        if np.all(norms == 1.0):
            return f"identity-{self.dim}"
        return f"identity-{self.dim}-{hashlib.sha256(norms.tobytes()).hexdigest()[:12]}"

    def evaluate(self, x) -> np.ndarray:
        states, single = as_states(x, self.dim)
        return states[0].copy() if single else states.copy()


def gram_matrix(feature_map, samples, volume: float = 1.0) -> np.ndarray:
    """蒙特卡洛 Gram：volume · mean_s h(s)h(s)ᵀ，按固定分块顺序累加"""
    samples, _ = as_states(samples, feature_map.dim)
    gram = None
    for start in range(0, samples.shape[0], GRAM_CHUNK):
        h = np.atleast_2d(feature_map.evaluate(samples[start:start + GRAM_CHUNK]))
        partial = h.T @ h
        gram = partial if gram is None else gram + partial
    return volume * gram / samples.shape[0]


def orthogonalize(feature_map: RawFeatureMap, quadrature_samples,
                  drop_tol: float = DEFAULT_DROP_TOL,
                  measure: Optional[MeasureDescriptor] = None,
                  quadrature_seed: Optional[int] = None) -> OrthoFeatureMap:
    """
    Gram 特征分解正交化：保留 λ_i > drop_tol·λ₁ 的特征对
    transform 行为保留的特征向量，ρ 为对应特征值
    """
    if drop_tol < 0:
        raise InvalidInput("drop_tol 必须 ≥ 0")
    samples, _ = as_states(quadrature_samples, feature_map.dim)
    if measure is None:
        measure = MeasureDescriptor(kind='empirical', n_samples=samples.shape[0])
    gram = gram_matrix(feature_map, samples, measure.volume)
    eigenvalues, eigenvectors = sym_eig(gram)
    keep = eigenvalues > max(drop_tol * eigenvalues[0], 0.0)
    if eigenvalues[0] <= 0 or not np.any(keep):
        raise DegenerateFeatures(f"所有 Gram 特征值均低于阈值 drop_tol={drop_tol}")
    return OrthoFeatureMap(raw=feature_map, transform=eigenvectors[:, keep].T,
                           rho=eigenvalues[keep], measure=measure,
                           quadrature_seed=quadrature_seed, drop_tol=drop_tol)


def evaluate_ortho(feature_map: OrthoFeatureMap, x) -> np.ndarray:
    return feature_map.evaluate(x)


def default_quadrature_size(n_states: int, n_features: int) -> int:
    return int(min(n_states, QUADRATURE_PER_FEATURE * n_features))


def empirical_quadrature(states, n_features: int, seed: int,
                         n_samples: Optional[int] = None) -> Tuple[np.ndarray, MeasureDescriptor]:
    """从轨迹无放回抽取求积点（左侧 L²(π)）"""
    states = np.asarray(states, dtype=np.float64)
    n = n_samples or default_quadrature_size(states.shape[0], n_features)
    n = min(n, states.shape[0])
    if n == states.shape[0]:
        chosen = states
    else:
        rng = np.random.default_rng(seed)
        chosen = states[np.sort(rng.choice(states.shape[0], size=n, replace=False))]
    return chosen, MeasureDescriptor(kind='empirical', n_samples=n)


def uniform_box_quadrature(states, n_features: int, seed: int,
                           n_samples: Optional[int] = None,
                           padding: float = BOX_PADDING) -> Tuple[np.ndarray, MeasureDescriptor]:
    """在数据包围盒（每侧外扩 padding 比例）上均匀采样求积点（右侧 L²）"""
    states = np.asarray(states, dtype=np.float64)
    lower, upper = states.min(axis=0), states.max(axis=0)
    span = np.where(upper > lower, upper - lower, 1.0)
    lower, upper = lower - padding * span, upper + padding * span
    n = n_samples or default_quadrature_size(states.shape[0], n_features)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(lower, upper, size=(n, states.shape[1]))
    measure = MeasureDescriptor(kind='uniform_box', n_samples=n,
                                lower=tuple(float(v) for v in lower),
                                upper=tuple(float(v) for v in upper))
    return samples, measure


def build_feature_maps(states, spec: GaussianKernelSpec, n_features: int, seed: int,
                       left_quadrature_seed: int, right_quadrature_seed: int,
                       drop_tol: float = DEFAULT_DROP_TOL,
                       n_quadrature: Optional[int] = None) -> Tuple[OrthoFeatureMap, OrthoFeatureMap]:
    """同一组 RFF 分别按 L²(π)（左）与包围盒 L²（右）正交化"""
    raw = sample_rff(spec, n_features, seed)
    left_samples, left_measure = empirical_quadrature(states, n_features, left_quadrature_seed, n_quadrature)
    right_samples, right_measure = uniform_box_quadrature(states, n_features, right_quadrature_seed,
                                                          n_quadrature)
    left = orthogonalize(raw, left_samples, drop_tol, left_measure, left_quadrature_seed)
    right = orthogonalize(raw, right_samples, drop_tol, right_measure, right_quadrature_seed)
    return left, right
