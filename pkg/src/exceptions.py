#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 异常类型

所有库函数只抛出异常、不打印；命令行入口根据 exit_code 决定进程退出码。
"""

from typing import Any, Dict, List, Optional


class FibreAnalysisError(Exception):
    """所有分析错误的基类"""
    exit_code = 1


class InvalidArgumentError(FibreAnalysisError, ValueError):
    """参数不合法"""


class EmptyCellError(FibreAnalysisError):
    """单元内没有有效样本"""


class PartialPackingError(FibreAnalysisError):
    """RSA 在达到目标纤维数之前耗尽尝试次数"""

    def __init__(self, message: str, achieved_count: int, fibres: Optional[List[Any]] = None):
        super().__init__(message)
        self.achieved_count = achieved_count
        self.fibres = fibres if fibres is not None else []


class EstimationFailedError(FibreAnalysisError):
    """估计量无法计算（例如所有核密度值都为0）"""


class ZeroDistanceError(FibreAnalysisError):
    """最近邻距离为0，应改用带惩罚的估计量"""


class DegenerateSampleError(FibreAnalysisError):
    """过滤后样本数量不足"""


class UndefinedStatisticError(FibreAnalysisError):
    """盒内或盒外没有观测，统计量无定义"""


class NoCriticalValueError(FibreAnalysisError):
    """在迭代上限内找不到临界值"""


class DegenerateFieldError(FibreAnalysisError):
    """随机场方差为0"""


class DegenerateComponentError(FibreAnalysisError):
    """混合模型的某个分量权重退化"""


class DegenerateFitError(FibreAnalysisError):
    """SAEM 拟合持续退化"""

    def __init__(self, message: str, last_state: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.last_state = last_state


class SmoothingFailedError(FibreAnalysisError):
    """空间平滑步骤找不到可接受的标签场"""


class FieldFormatError(FibreAnalysisError):
    """字段文件格式错误"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"第 {line_number} 行: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(InvalidArgumentError):
    """配置无效"""
    exit_code = 2


class StageError(FibreAnalysisError):
    """流水线某个阶段失败"""

    def __init__(self, stage: str, cause: Exception, artifacts: Optional[Dict[str, str]] = None):
        super().__init__(f"阶段 {stage} 失败: {cause}")
        self.stage = stage
        self.cause = cause
        self.artifacts = artifacts if artifacts is not None else {}
        self.exit_code = getattr(cause, "exit_code", 1)
