"""
文件读写
轨迹 CSV / 二进制格式，JSON 与 CSV 产物写出（浮点数一律 17 位有效数字）
"""
from pathlib import Path
from typing import Dict, List, Sequence
import json
import struct

import numpy as np

from errors import InvalidInput
from schemas import Trajectory, json_safe

TRAJ_MAGIC = b"SPDYTRAJ"
TRAJ_VERSION = 1
# magic, u32 version, u64 T, u32 d, 8 字节填充，共 32 字节
TRAJ_HEADER = struct.Struct('<8sIQI8x')
FLOAT_FORMAT = '%.17g'


def trajectory_format(path: str) -> str:
    """按文件头 magic 判断格式，文件不存在时按扩展名"""
    try:
        with open(path, 'rb') as f:
            return 'binary' if f.read(len(TRAJ_MAGIC)) == TRAJ_MAGIC else 'csv'
    except FileNotFoundError:
        return 'csv' if str(path).lower().endswith('.csv') else 'binary'


def write_trajectory_binary(traj: Trajectory, path: str):
    states = np.ascontiguousarray(traj.states, dtype='<f8')
    with open(path, 'wb') as f:
        f.write(TRAJ_HEADER.pack(TRAJ_MAGIC, TRAJ_VERSION, states.shape[0], states.shape[1]))
        f.write(states.tobytes())


def read_trajectory_binary(path: str) -> np.ndarray:
    with open(path, 'rb') as f:
        header = f.read(TRAJ_HEADER.size)
        if len(header) != TRAJ_HEADER.size:
            raise InvalidInput(f"{path}: 文件过短，缺少轨迹头")
        magic, version, length, dim = TRAJ_HEADER.unpack(header)
        if magic != TRAJ_MAGIC:
            raise InvalidInput(f"{path}: magic 不匹配 ({magic!r})")
        if version != TRAJ_VERSION:
            raise InvalidInput(f"{path}: 不支持的版本 {version}")
        payload = f.read()
    if len(payload) != 8 * length * dim:
        raise InvalidInput(f"{path}: 数据长度 {len(payload)} 与头部 T={length}, d={dim} 不一致")
    return np.frombuffer(payload, dtype='<f8').reshape(length, dim).astype(np.float64)


def write_trajectory_csv(traj: Trajectory, path: str):
    times = traj.sample_interval * np.arange(1, traj.length + 1)
    header = ['t'] + [f'x{i + 1}' for i in range(traj.dim)]
    write_csv(path, header, np.column_stack([times, traj.states]))


def read_trajectory_csv(path: str) -> np.ndarray:
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().strip().split(',')
    if not header or header[0] != 't' or header[1:] != [f'x{i + 1}' for i in range(len(header) - 1)]:
        raise InvalidInput(f"{path}: 表头必须是 t,x1,...,xd，实际 {header}")
    data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    return data[:, 1:]


def write_trajectory(traj: Trajectory, path: str, fmt: str = None):
    fmt = fmt or ('csv' if str(path).lower().endswith('.csv') else 'binary')
    if fmt == 'csv':
        write_trajectory_csv(traj, path)
    else:
        write_trajectory_binary(traj, path)


def read_trajectory(path: str, sample_interval: float, inner_dt: float) -> Trajectory:
    """读取轨迹文件；τ 与 inner_dt 不在文件中，由配置给出"""
    if trajectory_format(path) == 'csv':
        states = read_trajectory_csv(path)
    else:
        states = read_trajectory_binary(path)
    return Trajectory(states=states, sample_interval=sample_interval, inner_dt=inner_dt)


def write_csv(path: str, header: Sequence[str], rows):
    rows = np.asarray(rows, dtype=np.float64)
    np.savetxt(path, rows, fmt=FLOAT_FORMAT, delimiter=',', header=','.join(header), comments='')


def write_json(path: str, data: Dict):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(json_safe(data), f, ensure_ascii=False, indent=2)
        f.write('\n')


def read_json(path: str) -> Dict:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def read_labels(path: str) -> np.ndarray:
    """读取 x1..xd,label 格式的标签文件，返回最后一列"""
    data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    return data[:, -1].astype(np.int64)


def ensure_dir(path: str) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def column_names(prefix: str, count: int) -> List[str]:
    return [f'{prefix}{i + 1}' for i in range(count)]
