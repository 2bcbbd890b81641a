"""
错误类型定义
所有库函数只抛出这里的异常，main.py 负责映射为退出码
"""
from typing import Optional


class SpecDynError(Exception):
    """specdyn 异常基类"""


class InvalidInput(SpecDynError, ValueError):
    """输入不满足前置条件（形状、有限性、取值范围）"""


class DegenerateFeatures(SpecDynError):
    """特征正交化后没有任何特征值高于阈值"""


class NumericalBlowup(SpecDynError):
    """SDE 积分出现非有限状态"""

    def __init__(self, step_index: int, message: Optional[str] = None):
        self.step_index = step_index
        super().__init__(message or f"第 {step_index} 步出现非有限状态（势函数过陡或 dt 过大）")


class ConfigError(SpecDynError, ValueError):
    """配置文件校验失败"""
