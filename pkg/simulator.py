"""
SDE 模拟器
过阻尼 Langevin 扩散 dX = −∇V(X)dt + √2 dB 的 Euler 格式积分，按 stride 抽样得到间隔 τ 的轨迹
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq
from scipy.special import logsumexp

from errors import InvalidInput, NumericalBlowup
from schemas import Trajectory

DEFAULT_INNER_DT = 1e-3
DEFAULT_BURN_IN = 100_000
NOISE_BLOCK = 4096

FOUR_WELL_CENTERS = (-1.5, -0.5, 0.5, 1.5)
FOUR_WELL_WIDTH = 0.14


def _quadratic(params: Dict, x: np.ndarray, need_value: bool = True):
    """V = (k/2)‖x − c‖²"""
    diff = x - params['center']
    values = 0.5 * params['stiffness'] * np.sum(diff ** 2, axis=1) if need_value else None
    return values, params['stiffness'] * diff


def _polynomial(params: Dict, x: np.ndarray, need_value: bool = True):
    """一维多项式 V = Σ a_k x^k"""
    values = P.polyval(x[:, 0], params['coef']) if need_value else None
    grads = P.polyval(x[:, 0], params['deriv'])
    return values, grads[:, None]


def _gaussian_mixture(params: Dict, x: np.ndarray, need_value: bool = True):
    """V = −log Σ w_i exp(−‖x−μ_i‖²/2s_i²) + ridge·‖x‖²"""
    diff = x[:, None, :] - params['means'][None, :, :]
    logits = params['log_weights'] - np.sum(diff ** 2, axis=2) / (2.0 * params['variances'])
    values = None
    if need_value:
        values = -logsumexp(logits, axis=1) + params['ridge'] * np.sum(x ** 2, axis=1)
    resp = np.exp(logits - logits.max(axis=1, keepdims=True))
    resp /= resp.sum(axis=1, keepdims=True)
    grads = np.einsum('rk,rkd->rd', resp / params['variances'], diff) + 2.0 * params['ridge'] * x
    return values, grads


_FAMILIES = {
    'quadratic': _quadratic,
    'polynomial-multiwell': _polynomial,
    'gaussian-mixture': _gaussian_mixture,
}


def _parse_parameters(family: str, parameters: Tuple[float, ...], dim: int) -> Dict:
    """把系数列表解析成各族使用的数组"""
    coef = np.asarray(parameters, dtype=np.float64)
    if family == 'quadratic':
        if coef.shape[0] not in (1, 1 + dim):
            raise InvalidInput("quadratic 参数应为 (k,) 或 (k, c_1..c_d)")
        center = coef[1:] if coef.shape[0] > 1 else np.zeros(dim)
        return {'stiffness': float(coef[0]), 'center': center}
    if family == 'polynomial-multiwell':
        if dim != 1 or coef.shape[0] < 1:
            raise InvalidInput("polynomial-multiwell 仅支持一维且至少一个系数")
        return {'coef': coef, 'deriv': P.polyder(coef) if coef.shape[0] > 1 else np.zeros(1)}
    # gaussian-mixture: [ridge, (w, μ_1..μ_d, s) × K]
    width = dim + 2
    if coef.shape[0] < 1 + width or (coef.shape[0] - 1) % width != 0:
        raise InvalidInput("gaussian-mixture 参数应为 [ridge, (w, μ_1..μ_d, s) × K]")
    comps = coef[1:].reshape(-1, width)
    if np.any(comps[:, 0] <= 0) or np.any(comps[:, -1] <= 0) or coef[0] < 0:
        raise InvalidInput("gaussian-mixture 权重与宽度必须为正，ridge 非负")
    return {'ridge': float(coef[0]), 'log_weights': np.log(comps[:, 0]),
            'means': comps[:, 1:-1], 'variances': comps[:, -1] ** 2}


@dataclass(frozen=True)
class PotentialSpec:
    """势函数描述：族名、系数列表、维度；一维多阱势附带极小点与盆地边界"""
    family: str
    parameters: Tuple[float, ...]
    dim: int
    minima: Tuple[float, ...] = ()
    barriers: Tuple[float, ...] = ()
    name: str = ''

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise InvalidInput(f"未知势函数族: {self.family}")
        if self.dim < 1:
            raise InvalidInput("dim 必须 ≥ 1")
        object.__setattr__(self, 'parameters', tuple(float(p) for p in self.parameters))
        object.__setattr__(self, '_parsed', _parse_parameters(self.family, self.parameters, self.dim))

    def value_and_grad(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """批量计算 (V, ∇V)，x 形状 (R, d)"""
        return _FAMILIES[self.family](self._parsed, x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """只计算 ∇V（积分循环使用）"""
        return _FAMILIES[self.family](self._parsed, x, need_value=False)[1]

    def basin_label(self, x) -> np.ndarray:
        """一维盆地标签：相邻极大点之间的区间编号"""
        if not self.barriers:
            raise InvalidInput(f"势函数 {self.name or self.family} 未提供盆地边界")
        return np.searchsorted(np.asarray(self.barriers), np.asarray(x, dtype=np.float64).ravel())

    def to_dict(self) -> Dict:
        return {'family': self.family, 'parameters': list(self.parameters), 'dim': self.dim,
                'minima': list(self.minima), 'barriers': list(self.barriers), 'name': self.name}


def _as_state_batch(x, dim: int) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim <= 1
    arr = arr.reshape(1, -1) if single else arr
    if arr.shape[1] != dim:
        raise InvalidInput(f"状态维度应为 {dim}，实际 {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("状态含有 NaN/Inf")
    return arr, single


def potential_grad(spec: PotentialSpec, x):
    """
    计算势能与梯度
    单个状态返回 (float, (d,))，批量状态返回 ((R,), (R, d))
    """
    if spec.family not in _FAMILIES:
        raise InvalidInput(f"未知势函数族: {spec.family}")
    states, single = _as_state_batch(x, spec.dim)
    values, grads = spec.value_and_grad(states)
    if single:
        return float(values[0]), grads[0]
    return values, grads


def _critical_points(spec: PotentialSpec, brackets: Sequence[Tuple[float, float]]) -> Tuple[float, ...]:
    def grad(z: float) -> float:
        return float(spec.gradient(np.array([[z]]))[0, 0])
    return tuple(brentq(grad, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
                 for a, b in brackets)


def four_well_1d(width: float = FOUR_WELL_WIDTH) -> PotentialSpec:
    """
    一维四阱势：阱心 ±0.5、±1.5 的等权高斯混合，势垒高度约 1/(8 s²) − log 2（s = 0.14 时约 5.7）
    极小点与盆地边界由 ∇V 求根精确给出
    """
    parameters = [0.0]
    for center in FOUR_WELL_CENTERS:
        parameters.extend([1.0, center, width])
    base = PotentialSpec(family='gaussian-mixture', parameters=tuple(parameters), dim=1,
                         name='four_well_1d')
    half = 0.25
    minima = _critical_points(base, [(c - half, c + half) for c in FOUR_WELL_CENTERS])
    barriers = _critical_points(base, [(a + half, b - half) for a, b in
                                       zip(FOUR_WELL_CENTERS[:-1], FOUR_WELL_CENTERS[1:])])
    return PotentialSpec(family=base.family, parameters=base.parameters, dim=1,
                         minima=minima, barriers=barriers, name='four_well_1d')


def double_well_1d() -> PotentialSpec:
    """V = (x² − 1)²，极小点 ±1，势垒位于 0"""
    return PotentialSpec(family='polynomial-multiwell', parameters=(1.0, 0.0, -2.0, 0.0, 1.0),
                         dim=1, minima=(-1.0, 1.0), barriers=(0.0,), name='double_well_1d')


def quadratic(stiffness: float = 1.0, dim: int = 1) -> PotentialSpec:
    """V = (k/2)‖x‖²；k = 0 时为自由布朗运动"""
    return PotentialSpec(family='quadratic', parameters=(stiffness,), dim=dim,
                         minima=(0.0,) if stiffness > 0 and dim == 1 else (),
                         name='quadratic')


def gaussian_mixture(weights: Sequence[float], means: Sequence[Sequence[float]],
                     widths: Sequence[float], ridge: float = 0.0) -> PotentialSpec:
    """任意维高斯混合势（二维亚稳结构实验用）"""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    parameters = [ridge]
    for w, mu, s in zip(weights, means, widths):
        parameters.extend([w, *mu.tolist(), s])
    return PotentialSpec(family='gaussian-mixture', parameters=tuple(parameters),
                         dim=means.shape[1], name='gaussian_mixture')


def simulate_ensemble(spec: PotentialSpec, x0s, inner_dt: float, n_samples: int,
                      stride: int, burn_in: int, seeds: Sequence[int]) -> List[Trajectory]:
    """
    R 个副本同步做 Euler 步进，每个副本使用独立的种子化正态流
    副本 k 与 simulate(seed=seeds[k]) 逐位一致
    总内步数 = burn_in + stride·n_samples
    """
    if not inner_dt > 0:
        raise InvalidInput("inner_dt 必须为正")
    if stride < 1 or n_samples < 2 or burn_in < 0:
        raise InvalidInput("需要 stride ≥ 1、n_samples ≥ 2、burn_in ≥ 0")
    seeds = [int(s) for s in seeds]
    x, _ = _as_state_batch(np.asarray(x0s, dtype=np.float64).reshape(len(seeds), -1), spec.dim)
    x = x.copy()
    x0_rows = [tuple(float(v) for v in row) for row in x]
    rngs = [np.random.default_rng(s) for s in seeds]
    noise_scale = np.sqrt(2.0 * inner_dt)
    total_steps = burn_in + stride * n_samples
    recorded = np.empty((n_samples, len(seeds), spec.dim))

    step = 0
    with np.errstate(over='ignore', invalid='ignore'):
        while step < total_steps:
            block = min(NOISE_BLOCK, total_steps - step)
            noise = noise_scale * np.stack([rng.standard_normal((block, spec.dim)) for rng in rngs], axis=1)
            for k in range(block):
                x = x - spec.gradient(x) * inner_dt + noise[k]
                if not np.all(np.isfinite(x)):
                    raise NumericalBlowup(step + k + 1)
                done = step + k + 1 - burn_in
                if done > 0 and done % stride == 0:
                    recorded[done // stride - 1] = x
            step += block

    return [Trajectory(states=recorded[:, r, :], sample_interval=stride * inner_dt,
                       inner_dt=inner_dt, seed=seeds[r], burn_in_discarded=burn_in,
                       x0=x0_rows[r])
            for r in range(len(seeds))]


def simulate(spec: PotentialSpec, x0, inner_dt: float = DEFAULT_INNER_DT, n_samples: int = 2,
             stride: int = 1, burn_in: int = DEFAULT_BURN_IN, seed: int = 0) -> Trajectory:
    """单条轨迹的 Euler 积分"""
    return simulate_ensemble(spec, [x0], inner_dt, n_samples, stride, burn_in, [seed])[0]


def basin_occupancy(spec: PotentialSpec, states) -> Optional[Dict[int, float]]:
    """各盆地占比；没有盆地边界的势函数返回 None"""
    if not spec.barriers:
        return None
    labels = spec.basin_label(np.asarray(states)[:, 0])
    counts = np.bincount(labels, minlength=len(spec.barriers) + 1)
    return {int(k): float(c) / len(labels) for k, c in enumerate(counts)}
