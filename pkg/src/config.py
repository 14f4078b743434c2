#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测配置文件

Config 保存各模块的默认参数；运行配置是带点号分节的 key=value 文件
（如 grid.cell_edge=8），由 python-dotenv 读取后交给 pydantic 模型校验。
"""

import logging
import os
from typing import Any, Dict, Literal, Optional, Tuple

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Config:
    """应用配置类"""

    # 应用基本信息
    APP_NAME = "纤维方向异常检测"
    APP_VERSION = "1.0.0"
    APP_DESCRIPTION = "基于方向熵与变点检验的纤维材料异常检测"

    # 文件路径配置
    PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    CONFIGS_DIR = os.path.join(PROJECT_ROOT, "configs")
    RUNS_DIR = os.path.join(PROJECT_ROOT, "runs")

    # 模拟配置（桌面规模）
    SIMULATION_CONFIG = {
        "preset": "layered",
        "dims": (480, 480, 480),
        "fibre_length": 32.0,
        "radius": 4.0 / 3.0,  # Δ = 3 × 纤维直径
        "volume_fraction": 0.2,
        "layers": "x:0.1,y:0.5,x:0.1",
        "max_attempts": 10000,
        "voxel_size_um": 1.0,
    }

    # 网格配置
    GRID_CONFIG = {
        "cell_edge": 8,  # 小单元边长 Δ（体素），窗口边长 MΔ 整除层厚 160
        "window_factor": 5,  # 每个窗口 M×M×M 个小单元
    }

    # 熵估计配置
    ENTROPY_CONFIG = {
        "estimator": "nn",
        "penalty_radius": 0.01,
        "min_members": 8,
        "bandwidth": 0.25,
        "kernel": "epanechnikov",
    }

    # 变点检验配置
    TEST_CONFIG = {
        "alpha": 0.05,
        "gamma0": 0.05,
        "gamma1": 0.5,
        "direction": {"offset_step": 4, "extent_step": 4, "min_extent": 8, "m": 5, "sigma2": 0.2, "M0": 0.5},
        "entropy": {"offset_step": 2, "extent_step": 2, "min_extent": 4, "m": 1, "sigma2": 0.5, "M0": None},
    }

    # 聚类配置
    CLUSTER_CONFIG = {
        "selection": "combined",
        "spatial": True,
        "max_iterations": 500,
        "tolerance": 1e-4,
        "neighbour_threshold": 3,
        "n_fields": 1000,
        "max_attempts": 10000,
    }

    @classmethod
    def get_config(cls) -> Dict[str, Any]:
        """获取完整配置"""
        return {
            "app": {
                "name": cls.APP_NAME,
                "version": cls.APP_VERSION,
                "description": cls.APP_DESCRIPTION,
            },
            "paths": {
                "project_root": cls.PROJECT_ROOT,
                "configs_dir": cls.CONFIGS_DIR,
                "runs_dir": cls.RUNS_DIR,
            },
            "simulation": cls.SIMULATION_CONFIG,
            "grid": cls.GRID_CONFIG,
            "entropy": cls.ENTROPY_CONFIG,
            "test": cls.TEST_CONFIG,
            "cluster": cls.CLUSTER_CONFIG,
        }

    @classmethod
    def validate_config(cls) -> bool:
        """验证配置"""
        try:
            if not os.path.isdir(cls.CONFIGS_DIR):
                logger.warning(f"⚠️ 目录不存在: {cls.CONFIGS_DIR}")
                return False
            if not 0.0 < cls.TEST_CONFIG["alpha"] < 1.0:
                logger.warning("⚠️ 显著性水平必须位于 (0,1)")
                return False
            return True
        except Exception as e:
            logger.error(f"❌ 配置验证失败: {e}")
            return False


def _none_if_blank(value):
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        return None
    return value


def _triple(value):
    if isinstance(value, str):
        parts = [p for p in value.replace("x", ",").split(",") if p.strip()]
        if len(parts) == 1:
            parts = parts * 3
        return tuple(int(p) for p in parts)
    if isinstance(value, int):
        return (value,) * 3
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SimulationSection(_Section):
    preset: Literal["layered", "homogeneous"] = Field(Config.SIMULATION_CONFIG["preset"], description="样本预设")
    dims: Tuple[int, int, int] = Field(Config.SIMULATION_CONFIG["dims"], description="体素尺寸")
    fibre_length: float = Field(Config.SIMULATION_CONFIG["fibre_length"], gt=0, description="纤维长度 L")
    radius: float = Field(Config.SIMULATION_CONFIG["radius"], gt=0, description="纤维半径 r")
    volume_fraction: float = Field(Config.SIMULATION_CONFIG["volume_fraction"], gt=0, lt=1, description="目标体积分数")
    layers: str = Field(Config.SIMULATION_CONFIG["layers"], description="各层 轴:β，逗号分隔")
    max_attempts: int = Field(Config.SIMULATION_CONFIG["max_attempts"], ge=1, description="每根纤维的最大尝试次数")
    voxel_size_um: float = Field(Config.SIMULATION_CONFIG["voxel_size_um"], gt=0, description="体素边长（微米）")
    write_volume: bool = Field(False, description="是否写出体素化体数据")

    @field_validator("dims", mode="before")
    @classmethod
    def _parse_dims(cls, value):
        return _triple(value)

    @field_validator("layers")
    @classmethod
    def _check_layers(cls, value: str) -> str:
        for item in value.split(","):
            axis, _, beta = item.partition(":")
            if axis.strip().lower() not in ("x", "y", "z") or float(beta) <= 0:
                raise ValueError(f"层描述无效: {item}")
        return value

    def layer_spec(self) -> Tuple[Tuple[str, float], ...]:
        return tuple((item.split(":")[0].strip().lower(), float(item.split(":")[1]))
                     for item in self.layers.split(","))


class InputSection(_Section):
    directions: str = Field(..., description="方向场 CSV 路径")
    cells: Optional[Tuple[int, int, int]] = Field(None, description="小单元网格尺寸，缺省时按最大索引推断")

    @field_validator("cells", mode="before")
    @classmethod
    def _parse_cells(cls, value):
        return _triple(_none_if_blank(value))


class GridSection(_Section):
    cell_edge: int = Field(Config.GRID_CONFIG["cell_edge"], ge=1, description="小单元边长 Δ")
    window_factor: int = Field(Config.GRID_CONFIG["window_factor"], ge=1, description="窗口因子 M")


class EntropySection(_Section):
    estimator: Literal["nn", "plugin"] = Field(Config.ENTROPY_CONFIG["estimator"], description="熵估计方法")
    penalty_radius: float = Field(Config.ENTROPY_CONFIG["penalty_radius"], ge=0, description="惩罚半径 ε")
    min_members: int = Field(Config.ENTROPY_CONFIG["min_members"], ge=2, description="窗口最少有效成员数")
    bandwidth: float = Field(Config.ENTROPY_CONFIG["bandwidth"], gt=0, description="核带宽 h")
    kernel: Literal["epanechnikov", "biweight"] = Field(Config.ENTROPY_CONFIG["kernel"], description="核函数")


class AttributeTestSection(_Section):
    offset_step: int = Field(..., ge=1, description="Δ₀")
    extent_step: int = Field(..., ge=1, description="Δ₁")
    min_extent: int = Field(..., ge=0, description="L_M")
    m: int = Field(..., ge=1, description="依赖范围 m")
    sigma2: float = Field(..., gt=0, description="方差界 σ²")
    M0: Optional[float] = Field(None, gt=0, description="几乎必然界 M₀，缺省为 σ")

    @field_validator("M0", mode="before")
    @classmethod
    def _parse_m0(cls, value):
        return _none_if_blank(value)


class ChangepointSection(_Section):
    alpha: float = Field(Config.TEST_CONFIG["alpha"], description="总显著性水平")
    gamma0: float = Field(Config.TEST_CONFIG["gamma0"], ge=0, le=1)
    gamma1: float = Field(Config.TEST_CONFIG["gamma1"], ge=0, le=1)
    direction: AttributeTestSection = Field(
        default_factory=lambda: AttributeTestSection(**Config.TEST_CONFIG["direction"]))
    entropy: AttributeTestSection = Field(
        default_factory=lambda: AttributeTestSection(**Config.TEST_CONFIG["entropy"]))

    @field_validator("alpha")
    @classmethod
    def _check_alpha(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError(f"α 必须位于 (0,1): {value}")
        return value


class ClusterSection(_Section):
    selection: Literal["entropy", "mld", "combined"] = Field(Config.CLUSTER_CONFIG["selection"])
    spatial: bool = Field(Config.CLUSTER_CONFIG["spatial"], description="是否做空间平滑")
    max_iterations: int = Field(Config.CLUSTER_CONFIG["max_iterations"], ge=1)
    tolerance: float = Field(Config.CLUSTER_CONFIG["tolerance"], gt=0)
    radius: Optional[float] = Field(None, gt=0, description="邻域半径，缺省为 MΔ")
    neighbour_threshold: int = Field(Config.CLUSTER_CONFIG["neighbour_threshold"], ge=0)
    n_fields: int = Field(Config.CLUSTER_CONFIG["n_fields"], ge=1, description="可接受标签场个数 K")
    max_attempts: int = Field(Config.CLUSTER_CONFIG["max_attempts"], ge=1)

    @field_validator("radius", mode="before")
    @classmethod
    def _parse_radius(cls, value):
        return _none_if_blank(value)


class PipelineConfig(_Section):
    """一次完整运行的配置"""
    seed: int = Field(0, ge=0, description="随机种子")
    output_dir: str = Field(os.path.join("runs", "latest"), description="输出目录")
    simulation: Optional[SimulationSection] = None
    input: Optional[InputSection] = None
    grid: GridSection = Field(default_factory=GridSection)
    entropy: EntropySection = Field(default_factory=EntropySection)
    test: ChangepointSection = Field(default_factory=ChangepointSection)
    cluster: ClusterSection = Field(default_factory=ClusterSection)

    @model_validator(mode="after")
    def _exactly_one_source(self) -> "PipelineConfig":
        if (self.simulation is None) == (self.input is None):
            raise ValueError("simulation 与 input 必须且只能指定一个")
        return self

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def unflatten(flat: Dict[str, Any]) -> Dict[str, Any]:
    """把点号分节的键展开为嵌套字典"""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.strip().split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"配置键冲突: {key}")
            node = child
        node[parts[-1]] = value
    return nested


def build_pipeline_config(values: Dict[str, Any]) -> PipelineConfig:
    """从嵌套或扁平字典构造并校验运行配置"""
    if any("." in key for key in values):
        values = unflatten(values)
    try:
        return PipelineConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"配置校验失败: {e}") from e


def load_pipeline_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """读取 key=value 配置文件，overrides 中的键（同样可带点号）覆盖文件中的值"""
    if not os.path.isfile(path):
        raise ConfigError(f"配置文件不存在: {path}")
    flat = {k: v for k, v in dotenv_values(path).items() if v is not None}
    if overrides:
        flat.update({k: v for k, v in overrides.items() if v is not None})
    logger.info(f"读取配置: {path} ({len(flat)} 项)")
    return build_pipeline_config(flat)


def get_log_level(default: str = "INFO") -> int:
    """从 .env / 环境变量读取 LOG_LEVEL"""
    load_dotenv()
    name = os.getenv("LOG_LEVEL", default).strip().upper()
    if name not in LOG_LEVELS:
        name = default
    return getattr(logging, name)


def configure_logging(level: Optional[int] = None):
    logging.basicConfig(level=level if level is not None else get_log_level(), format=LOG_FORMAT)


# 创建全局配置实例
config = Config()
