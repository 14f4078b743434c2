#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 方向样本的非参数熵估计

包含球面核密度插值（plug-in）估计量、最近邻（Dobrushin）估计量及其带惩罚版本，
以及用球面数值积分计算参考熵。
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Optional

import numpy as np
from scipy import integrate
from scipy.special import entr
from sklearn.neighbors import KDTree

from .exceptions import (
    DegenerateSampleError,
    EstimationFailedError,
    InvalidArgumentError,
    ZeroDistanceError,
)
from .field_types import DirectionField
from .sphere_core import SPHERE_S2, AcgParams, ManifoldSpec, acg_density, chord_to_geodesic

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649
LOG_4PI = float(np.log(4.0 * np.pi))
NORMALISATION_TOLERANCE = 1e-3


def epanechnikov(t: np.ndarray) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    return np.where(t <= 1.0, 0.75 * (1.0 - t ** 2), 0.0)


def biweight(t: np.ndarray) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    return np.where(t <= 1.0, 15.0 / 16.0 * (1.0 - t ** 2) ** 2, 0.0)


KERNELS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "epanechnikov": epanechnikov,
    "biweight": biweight,
}


@dataclass
class PluginConfig:
    """核密度插值估计配置

    bandwidth: 带宽 h（弧度）
    neighbourhood: 子窗口 B 的半宽（单元数），B 为 (2b+1)³ 的立方邻域
    normalization: "count" 用 B 内被占据单元数归一化，"volume" 用 B 的单元总数
    """
    bandwidth: float = 0.25
    kernel: str = "epanechnikov"
    neighbourhood: int = 1
    normalization: str = "count"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidArgumentError(f"带宽必须 > 0: {self.bandwidth}")
        if self.kernel not in KERNELS:
            raise InvalidArgumentError(f"未知核函数: {self.kernel}")
        if self.neighbourhood < 0:
            raise InvalidArgumentError("子窗口半宽不能为负")
        if self.normalization not in ("count", "volume"):
            raise InvalidArgumentError(f"未知归一化方式: {self.normalization}")

    @property
    def window_size(self) -> int:
        return (2 * self.neighbourhood + 1) ** 3


@dataclass
class NnConfig:
    """最近邻估计配置，penalty_radius 为惩罚半径 ρ₀（弧度）"""
    penalty_radius: float = 0.01
    manifold: ManifoldSpec = field(default_factory=lambda: SPHERE_S2)

    def __post_init__(self):
        if self.penalty_radius < 0:
            raise InvalidArgumentError(f"惩罚半径不能为负: {self.penalty_radius}")


@dataclass
class EntropyEstimate:
    """熵估计值及诊断信息"""
    value: float
    n_total: int
    n_used: int
    n_dropped: int = 0
    normalization: str = ""

    def __float__(self) -> float:
        return float(self.value)

    def to_dict(self) -> Dict:
        return {
            "value": float(self.value),
            "n_total": self.n_total,
            "n_used": self.n_used,
            "n_dropped": self.n_dropped,
            "normalization": self.normalization,
        }


@lru_cache(maxsize=64)
def kernel_normalisation(bandwidth: float, kernel: str = "epanechnikov") -> float:
    """∫_{S²} |sin ρ|/(h²ρ) K(ρ/h) dσ，用于事后归一化核函数"""
    func = KERNELS[kernel]
    upper = min(bandwidth, np.pi)

    def integrand(rho):
        return np.sin(rho) * np.sinc(rho / np.pi) / bandwidth ** 2 * float(func(rho / bandwidth))

    value, _ = integrate.quad(integrand, 0.0, upper, limit=200)
    return 2.0 * np.pi * value


def kernel_value(t, cfg: PluginConfig) -> np.ndarray:
    """归一化后的核函数 K(t)"""
    return KERNELS[cfg.kernel](t) / kernel_normalisation(cfg.bandwidth, cfg.kernel)


def _spherical_weights(rho: np.ndarray, cfg: PluginConfig) -> np.ndarray:
    # sin ρ / ρ 在 ρ -> 0 处连续延拓为 1
    h = cfg.bandwidth
    return np.abs(np.sinc(rho / np.pi)) / h ** 2 * kernel_value(rho / h, cfg)


def kernel_density_at(y, samples, cfg: PluginConfig, size: Optional[float] = None) -> float:
    """f̂(y) = (1/|B|) Σ |sin ρ|/(h²ρ) K(ρ/h)，|B| 默认取样本数"""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if len(samples) == 0:
        raise InvalidArgumentError("核密度估计需要非空样本")
    y = np.asarray(y, dtype=np.float64).reshape(3)
    rho = np.arccos(np.clip(samples @ y, -1.0, 1.0))
    size = len(samples) if size is None else size
    return float(_spherical_weights(rho, cfg).sum() / size)


def _density_at_samples(queries: np.ndarray, samples: np.ndarray, cfg: PluginConfig, size: float) -> np.ndarray:
    """批量核密度：用 k-d 树在弦长半径 2·sin(h/2) 内找邻居"""
    if cfg.bandwidth >= np.pi:
        rho = np.arccos(np.clip(queries @ samples.T, -1.0, 1.0))
        return _spherical_weights(rho, cfg).sum(axis=1) / size
    tree = KDTree(samples)
    radius = 2.0 * np.sin(cfg.bandwidth / 2.0)
    neighbours, chords = tree.query_radius(queries, r=radius, return_distance=True)
    counts = np.array([len(n) for n in neighbours])
    if counts.sum() == 0:
        return np.zeros(len(queries))
    owner = np.repeat(np.arange(len(queries)), counts)
    rho = chord_to_geodesic(np.concatenate(chords))
    return np.bincount(owner, weights=_spherical_weights(rho, cfg), minlength=len(queries)) / size


def _entropy_from_density(density: np.ndarray, normalization: str) -> EntropyEstimate:
    positive = density > 0
    dropped = int((~positive).sum())
    if not np.any(positive):
        raise EstimationFailedError("所有核密度值均为0，无法估计熵")
    if dropped:
        logger.warning(f"插值估计: 丢弃 {dropped} 个零密度点")
    value = float(-np.mean(np.log(density[positive])))
    return EntropyEstimate(value=value, n_total=len(density), n_used=int(positive.sum()),
                           n_dropped=dropped, normalization=normalization)


def plugin_entropy_samples(samples, cfg: Optional[PluginConfig] = None) -> EntropyEstimate:
    """单个独立样本的插值熵估计：B 取整个样本，样本点自身计入"""
    cfg = cfg or PluginConfig()
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if len(samples) == 0:
        raise InvalidArgumentError("样本为空")
    if np.all(np.ptp(samples, axis=0) == 0):
        return EntropyEstimate(value=-np.inf, n_total=len(samples), n_used=len(samples), normalization="count")
    density = _density_at_samples(samples, samples, cfg, float(len(samples)))
    return _entropy_from_density(density, "count")


def plugin_entropy(field: DirectionField, window_rows: np.ndarray, cfg: Optional[PluginConfig] = None) -> EntropyEstimate:
    """窗口 S_l 内的插值熵估计：每个 X_i 的密度由平移子窗口 B+i 内的方向估计"""
    cfg = cfg or PluginConfig()
    window_rows = np.asarray(window_rows, dtype=np.int64)
    if len(window_rows) == 0:
        raise InvalidArgumentError("窗口没有成员")
    members = field.directions[window_rows]
    if np.all(np.ptp(members, axis=0) == 0):
        return EntropyEstimate(value=-np.inf, n_total=len(members), n_used=len(members),
                               normalization=cfg.normalization)

    lookup = np.full(field.grid.cells, -1, dtype=np.int64)
    lookup[tuple(field.indices.T)] = np.arange(len(field))
    b = cfg.neighbourhood
    shape = np.array(field.grid.cells)
    density = np.zeros(len(window_rows))
    for pos, row in enumerate(window_rows):
        lo = np.maximum(field.indices[row] - b, 0)
        hi = np.minimum(field.indices[row] + b + 1, shape)
        block = lookup[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        neighbours = block[block >= 0]
        size = len(neighbours) if cfg.normalization == "count" else cfg.window_size
        density[pos] = kernel_density_at(field.directions[row], field.directions[neighbours], cfg, size=size)
    return _entropy_from_density(density, cfg.normalization)


def nn_distances(samples, metric: str = "geodesic") -> np.ndarray:
    """每个点到最近邻的距离 ρ_i（测地距离由 k-d 树弦长换算）"""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if len(samples) < 2:
        raise InvalidArgumentError(f"最近邻距离至少需要2个点: N={len(samples)}")
    tree = KDTree(samples)
    dist, _ = tree.query(samples, k=2)
    chord = dist[:, 1]
    if metric == "euclidean":
        return chord
    if metric != "geodesic":
        raise InvalidArgumentError(f"未知度量: {metric}")
    return chord_to_geodesic(chord)


def nn_entropy(samples, cfg: Optional[NnConfig] = None) -> float:
    """最近邻熵估计 (d/N) Σ ln ρ_i + ln(c(N-1)) + γ"""
    cfg = cfg or NnConfig(penalty_radius=0.0)
    rho = nn_distances(samples)
    if np.any(rho <= 0):
        raise ZeroDistanceError("存在零最近邻距离，请使用带惩罚的估计量")
    n = len(rho)
    d = cfg.manifold.dim
    c = cfg.manifold.density_constant
    return float(d * np.mean(np.log(rho)) + np.log(c * (n - 1)) + EULER_GAMMA)


def nn_entropy_penalized(samples, cfg: Optional[NnConfig] = None) -> EntropyEstimate:
    """带惩罚的最近邻熵估计：只使用 ρ_i > ρ₀ 的点，计数也用过滤后的数目"""
    cfg = cfg or NnConfig()
    rho = nn_distances(samples)
    keep = rho > cfg.penalty_radius
    n_used = int(keep.sum())
    if n_used < 2:
        raise DegenerateSampleError(f"过滤后样本数不足: {n_used}")
    d = cfg.manifold.dim
    c = cfg.manifold.density_constant
    value = float(d * np.mean(np.log(rho[keep])) + np.log(c * (n_used - 1)) + EULER_GAMMA)
    return EntropyEstimate(value=value, n_total=len(rho), n_used=n_used, n_dropped=len(rho) - n_used,
                           normalization="penalized")


def _uniform_density(points: np.ndarray) -> np.ndarray:
    return np.full(len(np.atleast_2d(points)), 1.0 / (4.0 * np.pi))


def reference_entropy(density: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                      axis: Optional[np.ndarray] = None) -> float:
    """E_f = -∫ f ln f dσ 的自适应球面积分

    给出 axis 时假定密度关于该轴旋转对称，退化为轴向坐标的一维积分。
    """
    density = density or _uniform_density

    if axis is not None:
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        ortho = np.cross(axis, [1.0, 0.0, 0.0])
        if np.linalg.norm(ortho) < 1e-8:
            ortho = np.cross(axis, [0.0, 1.0, 0.0])
        ortho /= np.linalg.norm(ortho)

        def f_axial(t):
            point = t * axis + np.sqrt(max(0.0, 1.0 - t * t)) * ortho
            return float(density(point[None])[0])

        norm, _ = integrate.quad(f_axial, -1.0, 1.0, limit=400, epsabs=1e-11)
        norm *= 2.0 * np.pi
        _check_normalised(norm)
        value, _ = integrate.quad(lambda t: float(entr(f_axial(t))), -1.0, 1.0, limit=400, epsabs=1e-11)
        return float(2.0 * np.pi * value)

    def f_sphere(phi, t):
        r = np.sqrt(max(0.0, 1.0 - t * t))
        return float(density(np.array([[r * np.cos(phi), r * np.sin(phi), t]]))[0])

    norm, _ = integrate.dblquad(f_sphere, -1.0, 1.0, 0.0, 2.0 * np.pi, epsabs=1e-9)
    _check_normalised(norm)
    value, _ = integrate.dblquad(lambda phi, t: float(entr(f_sphere(phi, t))), -1.0, 1.0, 0.0, 2.0 * np.pi,
                                 epsabs=1e-9)
    return float(value)


def _check_normalised(total: float):
    if abs(total - 1.0) > NORMALISATION_TOLERANCE:
        raise InvalidArgumentError(f"密度未归一化: 积分 = {total:.6f}")


def acg_reference_entropy(params: AcgParams) -> float:
    """β 分布族的参考熵"""
    return reference_entropy(lambda pts: acg_density(pts, params), axis=params.preferred_axis)
