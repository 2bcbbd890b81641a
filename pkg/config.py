"""
运行配置
单个 JSON 文档解析为 RunConfig；未知字段与越界取值在任何计算之前以 ConfigError 拒绝
所有种子都显式给出，默认值只来自这里的 dataclass 定义
"""
from dataclasses import dataclass, field, fields, is_dataclass, asdict
from typing import Dict, List, Optional
import json
import typing

from errors import ConfigError, InvalidInput
from simulator import (PotentialSpec, double_well_1d, four_well_1d, gaussian_mixture, quadratic,
                       FOUR_WELL_WIDTH, DEFAULT_INNER_DT, DEFAULT_BURN_IN)
from features import DEFAULT_DROP_TOL

POTENTIAL_NAMES = ('four_well_1d', 'double_well_1d', 'quadratic', 'zero', 'gaussian_mixture')
TRAJECTORY_FORMATS = ('binary', 'csv')
REFERENCE_METHODS = ('quadrature', 'long_run', 'both')
TAU_TOLERANCE = 1e-9


@dataclass
class PotentialConfig:
    name: str = 'four_well_1d'
    dim: int = 1
    stiffness: float = 1.0
    width: float = FOUR_WELL_WIDTH
    weights: List[float] = field(default_factory=list)
    means: List[List[float]] = field(default_factory=list)
    widths: List[float] = field(default_factory=list)
    ridge: float = 0.0

    def validate(self):
        if self.name not in POTENTIAL_NAMES:
            raise ConfigError(f"potential.name 必须是 {POTENTIAL_NAMES} 之一，实际 {self.name}")
        if self.dim < 1:
            raise ConfigError("potential.dim 必须 ≥ 1")
        if self.name == 'gaussian_mixture' and not (
                self.weights and len(self.weights) == len(self.means) == len(self.widths)):
            raise ConfigError("gaussian_mixture 需要等长且非空的 weights/means/widths")

    def build(self) -> PotentialSpec:
        try:
            if self.name == 'four_well_1d':
                return four_well_1d(self.width)
            if self.name == 'double_well_1d':
                return double_well_1d()
            if self.name == 'quadratic':
                return quadratic(self.stiffness, self.dim)
            if self.name == 'zero':
                return quadratic(0.0, self.dim)
            return gaussian_mixture(self.weights, self.means, self.widths, self.ridge)
        except InvalidInput as exc:
            raise ConfigError(f"势函数参数无效: {exc}") from exc


@dataclass
class SimulationConfig:
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    inner_dt: float = DEFAULT_INNER_DT
    stride: int = 100
    n_samples: int = 100_000
    burn_in: int = DEFAULT_BURN_IN
    seed: int = 0
    x0: Optional[List[float]] = None
    n_replicas: int = 1
    format: str = 'binary'

    def validate(self):
        self.potential.validate()
        if not self.inner_dt > 0:
            raise ConfigError("simulation.inner_dt 必须为正")
        if self.stride < 1:
            raise ConfigError("simulation.stride 必须 ≥ 1")
        if self.n_samples < 2:
            raise ConfigError("simulation.n_samples 必须 ≥ 2")
        if self.burn_in < 0:
            raise ConfigError("simulation.burn_in 必须 ≥ 0")
        if self.n_replicas < 1:
            raise ConfigError("simulation.n_replicas 必须 ≥ 1")
        if self.format not in TRAJECTORY_FORMATS:
            raise ConfigError(f"simulation.format 必须是 {TRAJECTORY_FORMATS} 之一")
        if self.x0 is not None and len(self.x0) != self.potential.dim:
            raise ConfigError("simulation.x0 长度必须等于势函数维度")

    @property
    def sample_interval(self) -> float:
        return self.stride * self.inner_dt


@dataclass
class FeatureConfig:
    bandwidth: float = 0.2
    n_features: int = 2000
    drop_tol: float = DEFAULT_DROP_TOL
    seed: int = 1
    left_quadrature_seed: int = 2
    right_quadrature_seed: int = 3
    n_quadrature: Optional[int] = None
    normalized: bool = False

    def validate(self):
        if not self.bandwidth > 0:
            raise ConfigError("features.bandwidth 必须为正")
        if self.n_features < 1:
            raise ConfigError("features.n_features 必须 ≥ 1")
        if self.drop_tol < 0:
            raise ConfigError("features.drop_tol 必须 ≥ 0")
        if self.n_quadrature is not None and self.n_quadrature < 1:
            raise ConfigError("features.n_quadrature 必须 ≥ 1")


@dataclass
class EstimationConfig:
    rank: int = 4

    def validate(self):
        if self.rank < 1:
            raise ConfigError(f"estimation.rank 必须 ≥ 1，实际 {self.rank}")


@dataclass
class ClusteringConfig:
    m: List[int] = field(default_factory=lambda: [4])
    n_restarts: int = 10
    max_iter: int = 300
    seed: int = 0
    reference: Optional[str] = 'basins'

    def validate(self):
        if isinstance(self.m, int):
            self.m = [self.m]
        if not self.m or any(k < 1 for k in self.m):
            raise ConfigError("clustering.m 必须是非空的正整数列表")
        if self.n_restarts < 1 or self.max_iter < 1:
            raise ConfigError("clustering.n_restarts 与 max_iter 必须 ≥ 1")
        if self.reference not in (None, 'basins'):
            raise ConfigError("clustering.reference 只能是 'basins' 或 null")


@dataclass
class ReferenceConfig:
    method: str = 'quadrature'
    grid_points: int = 401
    lower: float = -2.5
    upper: float = 2.5
    n_ref: int = 10_000_000
    seed: int = 9999

    def validate(self):
        if self.method not in REFERENCE_METHODS:
            raise ConfigError(f"benchmark.reference.method 必须是 {REFERENCE_METHODS} 之一")
        if self.grid_points < 3 or not self.upper > self.lower:
            raise ConfigError("benchmark.reference 网格需要 grid_points ≥ 3 且 upper > lower")
        if self.n_ref < 1:
            raise ConfigError("benchmark.reference.n_ref 必须 ≥ 1")


@dataclass
class BenchmarkConfig:
    n_values: List[int] = field(default_factory=lambda: [1000, 3000, 10000, 30000, 100000])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)

    def validate(self):
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ConfigError("benchmark.n_values 必须是非空的正整数列表")
        if not self.seeds:
            raise ConfigError("benchmark.seeds 不能为空")
        self.reference.validate()


@dataclass
class PathsConfig:
    trajectory: str = 'trajectory.bin'
    model_dir: str = 'model'
    reference_labels: Optional[str] = None


@dataclass
class RunConfig:
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> 'RunConfig':
        self.simulation.validate()
        self.features.validate()
        self.estimation.validate()
        self.clustering.validate()
        self.benchmark.validate()
        seeds = [self.simulation.seed, self.features.seed, self.features.left_quadrature_seed,
                 self.features.right_quadrature_seed, self.clustering.seed,
                 self.benchmark.reference.seed, *self.benchmark.seeds]
        if any(s < 0 for s in seeds):
            raise ConfigError(f"种子必须 ≥ 0，实际 {seeds}")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)


def _unwrap_optional(annotation):
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    return args[0] if typing.get_origin(annotation) is typing.Union and len(args) == 1 else annotation


def _is_optional(annotation) -> bool:
    return typing.get_origin(annotation) is typing.Union and type(None) in typing.get_args(annotation)


def _check_value(value, annotation, path: str):
    """按注解递归做类型检查（bool 不当作数值，列表逐个元素检查）；返回规范化后的取值"""
    if value is None:
        if _is_optional(annotation):
            return None
        raise ConfigError(f"{path} 不能为 null")
    annotation = _unwrap_optional(annotation)
    base = typing.get_origin(annotation) or annotation
    if base is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path} 必须是列表")
        item = (typing.get_args(annotation) or (typing.Any,))[0]
        return [_check_value(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if base is bool and not isinstance(value, bool):
        raise ConfigError(f"{path} 必须是布尔值")
    if base is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path} 必须是整数，实际 {value!r}")
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} 必须是数值，实际 {value!r}")
        return float(value)
    if base is str and not isinstance(value, str):
        raise ConfigError(f"{path} 必须是字符串")
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} 必须是 JSON 对象")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path} 含有未知字段: {unknown}")
    kwargs = {}
    for name, value in data.items():
        annotation = _unwrap_optional(hints[name])
        if is_dataclass(annotation):
            kwargs[name] = _build(annotation, value, f"{path}.{name}")
            continue
        if name == 'm' and isinstance(value, int) and not isinstance(value, bool):
            value = [value]
        kwargs[name] = _check_value(value, hints[name], f"{path}.{name}")
    return cls(**kwargs)


def config_from_dict(data: Dict) -> RunConfig:
    return _build(RunConfig, data, 'config').validate()


def apply_tau(config: RunConfig, tau: float) -> RunConfig:
    """以采样间隔 τ 覆盖 simulation.stride；τ 必须是 inner_dt 的正整数倍"""
    dt = config.simulation.inner_dt
    if isinstance(tau, bool) or not tau > 0:
        raise ConfigError(f"τ 必须为正，实际 {tau!r}")
    stride = int(round(tau / dt))
    if stride < 1 or abs(stride * dt - tau) > TAU_TOLERANCE * tau:
        raise ConfigError(f"τ = {tau} 不是 inner_dt = {dt} 的整数倍")
    config.simulation.stride = stride
    return config.validate()


def load_config(path: str) -> RunConfig:
    """读取并校验配置文件；文件不可读时抛出 OSError"""
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"配置文件不是合法 JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(config: RunConfig, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config.to_dict(), f, ensure_ascii=False, indent=2)
        f.write('\n')
