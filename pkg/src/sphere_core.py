#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 单位球面上的方向几何

测地距离、半球折叠、方向分布抽样（均匀分布与 β 分布族）以及主轴提取。
所有函数都是纯函数，随机性只来自调用方传入的 numpy Generator。
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .exceptions import EmptyCellError, InvalidArgumentError

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6
SIGN_TIE_TOLERANCE = 1e-12


class Axis(Enum):
    """坐标轴"""
    X = 0
    Y = 1
    Z = 2

    @classmethod
    def parse(cls, value: Union[str, int, "Axis"]) -> "Axis":
        if isinstance(value, Axis):
            return value
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(int(value))

    def unit(self) -> np.ndarray:
        vec = np.zeros(3)
        vec[self.value] = 1.0
        return vec


@dataclass(frozen=True)
class UnitVector3:
    """单位向量 (x, y, z)"""
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = float(np.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise InvalidArgumentError(f"不是单位向量: 模长 {norm}")

    @classmethod
    def from_array(cls, values) -> "UnitVector3":
        """从数组构造，容差内的误差会被归一化掉"""
        arr = np.asarray(values, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(arr)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise InvalidArgumentError(f"不是单位向量: 模长 {norm}")
        arr = arr / norm
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass
class ManifoldSpec:
    """流形常数：Hausdorff 维数 d 与测地球面积常数 c"""
    dim: int
    density_constant: float

    def __post_init__(self):
        if self.dim < 1 or self.density_constant <= 0:
            raise InvalidArgumentError(f"流形参数无效: d={self.dim}, c={self.density_constant}")


# 测地球面积 2π(1-cos δ) ~ π δ²
SPHERE_S2 = ManifoldSpec(dim=2, density_constant=np.pi)


def _as_vectors(u) -> np.ndarray:
    if isinstance(u, UnitVector3):
        return u.as_array()
    return np.asarray(u, dtype=np.float64)


def _check_unit(arr: np.ndarray):
    norms = np.linalg.norm(arr, axis=-1)
    if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
        raise InvalidArgumentError("输入向量不是单位向量")


@dataclass
class AcgParams:
    """轴对称 β 分布族参数：β < 1 向首选轴集中，β = 1 为均匀分布"""
    preferred_axis: np.ndarray
    beta: float

    def __post_init__(self):
        if isinstance(self.preferred_axis, Axis):
            self.preferred_axis = self.preferred_axis.unit()
        axis = _as_vectors(self.preferred_axis).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise InvalidArgumentError("首选轴不能为零向量")
        self.preferred_axis = axis / norm
        if not self.beta > 0:
            raise InvalidArgumentError(f"集中参数 beta 必须 > 0: {self.beta}")


def geodesic_distance(u, v) -> Union[float, np.ndarray]:
    """测地距离 arccos<u, v>，支持按最后一维广播"""
    a = _as_vectors(u)
    b = _as_vectors(v)
    _check_unit(a)
    _check_unit(b)
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    dist = np.arccos(dot)
    if np.ndim(dist) == 0:
        return float(dist)
    return dist


def chord_to_geodesic(chord) -> np.ndarray:
    """欧氏弦长换算为测地距离 2·arcsin(c/2)"""
    return 2.0 * np.arcsin(np.clip(np.asarray(chord, dtype=np.float64) / 2.0, 0.0, 1.0))


def fold_field(vectors: np.ndarray, axis: Union[Axis, str, int] = Axis.Z) -> np.ndarray:
    """批量半球折叠：指定坐标为负的行整体取反"""
    arr = np.array(vectors, dtype=np.float64, copy=True)
    col = Axis.parse(axis).value
    flip = arr[..., col] < 0
    arr[flip] = -arr[flip]
    return arr


def fold_to_hemisphere(u, axis: Union[Axis, str, int] = Axis.Z):
    """折叠到指定坐标非负的半球"""
    if isinstance(u, UnitVector3):
        return UnitVector3.from_array(fold_field(u.as_array(), axis))
    return fold_field(u, axis)


def sample_uniform_sphere(rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """球面均匀分布抽样（标准正态向量归一化）"""
    n = 1 if size is None else int(size)
    draws = rng.standard_normal((n, 3))
    norms = np.linalg.norm(draws, axis=1)
    while np.any(norms == 0):
        zero = norms == 0
        draws[zero] = rng.standard_normal((int(zero.sum()), 3))
        norms = np.linalg.norm(draws, axis=1)
    draws /= norms[:, None]
    return draws[0] if size is None else draws


def orthonormal_frame(axis: np.ndarray):
    """返回与 axis 正交的两个单位向量 e1, e2，(e1, e2, axis) 构成右手系"""
    axis = np.asarray(axis, dtype=np.float64)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(axis)))] = 1.0
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def acg_density(u, params: AcgParams) -> np.ndarray:
    """f(u; β) = β / (4π (1 + (β²-1)(u·a)²)^{3/2})，对球面积分为1"""
    arr = _as_vectors(u)
    t = arr @ params.preferred_axis
    k = params.beta ** 2 - 1.0
    return params.beta / (4.0 * np.pi * (1.0 + k * t ** 2) ** 1.5)


def sample_acg(params: AcgParams, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """β 分布族抽样

    轴向坐标 t = u·a 的分布函数为 F(t) = (1 + β t / sqrt(1 + (β²-1) t²)) / 2，
    对其求逆得到 t，方位角均匀分布。
    """
    n = 1 if size is None else int(size)
    beta = params.beta
    k = beta ** 2 - 1.0
    s = (2.0 * rng.random(n) - 1.0) / beta
    t = s / np.sqrt(1.0 - k * s ** 2)
    t = np.clip(t, -1.0, 1.0)
    phi = 2.0 * np.pi * rng.random(n)
    radial = np.sqrt(np.maximum(0.0, 1.0 - t ** 2))
    e1, e2 = orthonormal_frame(params.preferred_axis)
    draws = (radial * np.cos(phi))[:, None] * e1 + (radial * np.sin(phi))[:, None] * e2 + t[:, None] * params.preferred_axis
    draws /= np.linalg.norm(draws, axis=1)[:, None]
    return draws[0] if size is None else draws


def orient_axes(vectors: np.ndarray) -> np.ndarray:
    """固定轴的符号：折叠到 z >= 0；z 为0时依次看 x、y"""
    arr = np.array(vectors, dtype=np.float64, copy=True)
    single = arr.ndim == 1
    arr = arr.reshape(-1, 3)
    flip = np.zeros(len(arr), dtype=bool)
    undecided = np.ones(len(arr), dtype=bool)
    for col in (2, 0, 1):
        coord = arr[:, col]
        decided = undecided & (np.abs(coord) > SIGN_TIE_TOLERANCE)
        flip |= decided & (coord < 0)
        undecided &= ~decided
    arr[flip] = -arr[flip]
    return arr[0] if single else arr


def principal_axes(scatter: np.ndarray) -> np.ndarray:
    """批量主轴：对 (n,3,3) 散布矩阵取最大特征值对应的特征向量"""
    _, vecs = np.linalg.eigh(scatter)
    return orient_axes(vecs[..., :, -1])


def principal_axis(samples, weights=None) -> np.ndarray:
    """加权散布矩阵 Σ w u uᵀ 的主特征向量（折叠到 z >= 0）"""
    arr = _as_vectors(samples).reshape(-1, 3)
    if weights is None:
        w = np.ones(len(arr))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(arr):
            raise InvalidArgumentError("样本与权重数量不一致")
        if np.any(w < 0):
            raise InvalidArgumentError("权重必须非负")
    if len(arr) == 0 or not np.any(w > 0):
        raise EmptyCellError("主轴计算需要至少一个正权重样本")
    scatter = (arr * w[:, None]).T @ arr
    return principal_axes(scatter[None])[0]
