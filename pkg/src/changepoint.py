#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 变点检验

枚举候选异常盒 Θ₀，用前缀和计算扫描统计量 T_W，按 m 依赖随机场的
指数型尾概率界求临界值与 p 值上界，用经验协方差估计 m，
并对四个属性做 Bonferroni 校正的联合检验。
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal
from scipy.special import logsumexp

from .exceptions import (
    DegenerateFieldError,
    InvalidArgumentError,
    NoCriticalValueError,
    UndefinedStatisticError,
)
from .fibre_sim import generate_block_gaussian_field
from .field_types import BoxParam, ScalarField3

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
BISECTION_TOLERANCE = 1e-6
MAX_DOUBLINGS = 200
DEFAULT_EPS0 = 0.04


@dataclass
class ThetaGrid:
    """Θ₀ 的格点参数

    origin = Δ₀·i（从0开始），extent = Δ₁·l 个单元，要求 Δ₀·i + Δ₁·l <= M_j，
    extent >= L_M（单元数），且 γ₀ <= |I_θ ∩ J| / (M₁M₂M₃) <= γ₁。
    """
    offset_step: int = 8
    extent_step: int = 8
    min_extent: int = 22
    gamma0: float = 0.05
    gamma1: float = 0.5

    def __post_init__(self):
        if self.offset_step < 1 or self.extent_step < 1:
            raise InvalidArgumentError("Δ₀、Δ₁ 必须 >= 1")
        if self.min_extent < 0:
            raise InvalidArgumentError("L_M 不能为负")
        if not (0.0 <= self.gamma0 <= 1.0 and 0.0 <= self.gamma1 <= 1.0):
            raise InvalidArgumentError(f"γ 必须位于 [0,1]: γ₀={self.gamma0}, γ₁={self.gamma1}")
        if self.gamma1 > 0.5:
            logger.debug(f"γ₁={self.gamma1} > 1/2，盒子可能大于其补集")


@dataclass
class TailBoundParams:
    """尾概率界参数：依赖范围 m、方差界 σ²、几乎必然界 M₀（默认 M₀ = σ）"""
    m: int
    sigma2: float = 1.0
    M0: Optional[float] = None

    def __post_init__(self):
        if self.m < 1:
            raise InvalidArgumentError(f"m 必须 >= 1: {self.m}")
        if not self.sigma2 > 0:
            raise InvalidArgumentError(f"σ² 必须 > 0: {self.sigma2}")
        if self.M0 is None:
            self.M0 = math.sqrt(self.sigma2)
        if not self.M0 > 0:
            raise InvalidArgumentError(f"M₀ 必须 > 0: {self.M0}")

    @property
    def H(self) -> float:
        return self.M0


@dataclass
class AttributeTestSettings:
    """单个属性的检验设置"""
    theta: ThetaGrid
    tail: TailBoundParams


@dataclass
class TestResult:
    """单个属性的检验结果"""
    attribute: str
    statistic: float
    argmax_box: Optional[BoxParam]
    y_alpha: float
    p_bound: float
    decision: str
    alpha: float
    log10_p_bound: float = 0.0
    sample_variance: float = 0.0
    theta_count: int = 0
    parameters: Dict[str, Any] = field(default_factory=dict)

    __test__ = False

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "attribute": self.attribute,
            "statistic": float(self.statistic),
            "argmax_box": None if self.argmax_box is None else self.argmax_box.to_dict(),
            "y_alpha": float(self.y_alpha),
            "p_bound": float(self.p_bound),
            "log10_p_bound": float(self.log10_p_bound),
            "decision": self.decision,
            "alpha": float(self.alpha),
            "sample_variance": float(self.sample_variance),
            "theta_count": int(self.theta_count),
            "parameters": self.parameters,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TestResult":
        box = data.get("argmax_box")
        return cls(
            attribute=data["attribute"],
            statistic=data["statistic"],
            argmax_box=None if box is None else BoxParam.from_dict(box),
            y_alpha=data["y_alpha"],
            p_bound=data["p_bound"],
            decision=data["decision"],
            alpha=data["alpha"],
            log10_p_bound=data.get("log10_p_bound", 0.0),
            sample_variance=data.get("sample_variance", 0.0),
            theta_count=data.get("theta_count", 0),
            parameters=data.get("parameters", {}),
        )


@dataclass
class SuiteResult:
    """四个属性的联合检验结果"""
    results: List[TestResult]
    alpha: float

    @property
    def verdict(self) -> str:
        return "reject" if any(r.rejected for r in self.results) else "accept"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "verdict": self.verdict,
            "results": [r.to_dict() for r in self.results],
        }


class ThetaSet:
    """Θ₀ 的数组表示，按 (origin, extent) 字典序排列"""

    def __init__(self, origins: np.ndarray, extents: np.ndarray, n_inside: np.ndarray, n_total: int):
        self.origins = np.asarray(origins, dtype=np.int64).reshape(-1, 3)
        self.extents = np.asarray(extents, dtype=np.int64).reshape(-1, 3)
        self.n_inside = np.asarray(n_inside, dtype=np.int64).reshape(-1)
        self.n_total = int(n_total)

    @property
    def n_outside(self) -> np.ndarray:
        return self.n_total - self.n_inside

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, i: int) -> BoxParam:
        return BoxParam(origin=tuple(self.origins[i]), extent=tuple(self.extents[i]),
                        n_inside=int(self.n_inside[i]), n_outside=int(self.n_outside[i]))

    def __iter__(self) -> Iterator[BoxParam]:
        for i in range(len(self)):
            yield self[i]

    def sizes(self) -> np.ndarray:
        """(|I_θ|, |I_θᶜ|) 对，形状 (K, 2)"""
        return np.stack([self.n_inside, self.n_outside], axis=1)


class BoxSums:
    """三维前缀和：O(1) 查询盒内加权和与被占据数"""

    def __init__(self, field_: ScalarField3):
        self.dims = field_.dims
        weighted = np.where(field_.mask, field_.values, 0.0)
        self._sum = self._integral(weighted)
        self._count = self._integral(field_.mask.astype(np.int64))
        self.total_sum = float(self._sum[-1, -1, -1])
        self.total_count = int(self._count[-1, -1, -1])

    @staticmethod
    def _integral(values: np.ndarray) -> np.ndarray:
        table = np.zeros(tuple(d + 1 for d in values.shape), dtype=values.dtype)
        table[1:, 1:, 1:] = values.cumsum(0).cumsum(1).cumsum(2)
        return table

    @staticmethod
    def _query(table: np.ndarray, origin: np.ndarray, extent: np.ndarray):
        o = np.asarray(origin, dtype=np.int64)
        e = o + np.asarray(extent, dtype=np.int64)
        x0, y0, z0 = o[..., 0], o[..., 1], o[..., 2]
        x1, y1, z1 = e[..., 0], e[..., 1], e[..., 2]
        return (table[x1, y1, z1] - table[x0, y1, z1] - table[x1, y0, z1] - table[x1, y1, z0]
                + table[x0, y0, z1] + table[x0, y1, z0] + table[x1, y0, z0] - table[x0, y0, z0])

    def box_sum(self, origin, extent):
        return self._query(self._sum, origin, extent)

    def box_count(self, origin, extent):
        return self._query(self._count, origin, extent)


def build_prefix_sums(field_: ScalarField3) -> BoxSums:
    return BoxSums(field_)


def _axis_candidates(length: int, grid: ThetaGrid) -> Tuple[np.ndarray, np.ndarray]:
    origins, extents = [], []
    for origin in range(0, length, grid.offset_step):
        extent = grid.extent_step
        while origin + extent <= length:
            if extent >= grid.min_extent:
                origins.append(origin)
                extents.append(extent)
            extent += grid.extent_step
    return np.array(origins, dtype=np.int64), np.array(extents, dtype=np.int64)


def enumerate_theta(dims: Tuple[int, int, int], mask: Optional[np.ndarray], grid: ThetaGrid) -> ThetaSet:
    """枚举满足格点、最小边长与体积分数约束的全部盒子（按占据单元计数）"""
    dims = tuple(int(d) for d in dims)
    if mask is None:
        mask = np.ones(dims, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    counts = BoxSums(ScalarField3(values=mask.astype(np.float64), mask=mask))
    n_total = counts.total_count

    per_axis = [_axis_candidates(d, grid) for d in dims]
    if any(len(o) == 0 for o, _ in per_axis):
        return ThetaSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), n_total)
    picks = np.meshgrid(*[np.arange(len(o)) for o, _ in per_axis], indexing="ij")
    picks = [p.ravel() for p in picks]
    origins = np.stack([per_axis[j][0][picks[j]] for j in range(3)], axis=1)
    extents = np.stack([per_axis[j][1][picks[j]] for j in range(3)], axis=1)

    inside = counts.box_count(origins, extents)
    volume = float(np.prod(dims))
    keep = (inside >= grid.gamma0 * volume) & (inside <= grid.gamma1 * volume)
    keep &= (inside > 0) & (inside < n_total)
    origins, extents, inside = origins[keep], extents[keep], inside[keep]

    order = np.lexsort((extents[:, 2], extents[:, 1], extents[:, 0], origins[:, 2], origins[:, 1], origins[:, 0]))
    theta = ThetaSet(origins[order], extents[order], inside[order], n_total)
    logger.info(f"枚举 Θ₀: 网格 {dims}, Δ₀={grid.offset_step}, Δ₁={grid.extent_step}, L_M={grid.min_extent}, |Θ₀|={len(theta)}")
    return theta


def calibrate_min_extent(dims: Tuple[int, int, int], mask: Optional[np.ndarray], grid: ThetaGrid,
                         target_count: int) -> Tuple[int, int]:
    """选取使 |Θ₀| 最接近目标值的 L_M，返回 (L_M, |Θ₀|)"""
    base = ThetaGrid(offset_step=grid.offset_step, extent_step=grid.extent_step, min_extent=0,
                     gamma0=grid.gamma0, gamma1=grid.gamma1)
    theta = enumerate_theta(dims, mask, base)
    if len(theta) == 0:
        return 0, 0
    shortest = theta.extents.min(axis=1)
    best_lm, best_count = 0, len(theta)
    for lm in range(0, int(shortest.max()) + 2):
        count = int((shortest >= lm).sum())
        if abs(count - target_count) < abs(best_count - target_count):
            best_lm, best_count = lm, count
    logger.info(f"L_M 校准: 目标 {target_count}, 选取 L_M={best_lm}, |Θ₀|={best_count}")
    return best_lm, best_count


def z_statistic(sums: BoxSums, theta: BoxParam) -> float:
    """盒内与盒外被占据单元均值之差"""
    n_in = int(sums.box_count(theta.origin, theta.extent))
    n_out = sums.total_count - n_in
    if n_in <= 0 or n_out <= 0:
        raise UndefinedStatisticError(f"盒内或盒外没有观测: 盒内 {n_in}, 盒外 {n_out}")
    s_in = float(sums.box_sum(theta.origin, theta.extent))
    return s_in / n_in - (sums.total_sum - s_in) / n_out


def z_statistics(sums: BoxSums, theta: ThetaSet) -> np.ndarray:
    n_in = sums.box_count(theta.origins, theta.extents).astype(np.float64)
    n_out = sums.total_count - n_in
    if np.any(n_in <= 0) or np.any(n_out <= 0):
        raise UndefinedStatisticError("存在盒内或盒外没有观测的候选盒")
    s_in = sums.box_sum(theta.origins, theta.extents)
    return s_in / n_in - (sums.total_sum - s_in) / n_out


def scan_statistic(sums: BoxSums, theta: ThetaSet) -> Tuple[float, BoxParam]:
    """T_W = max |Z(θ)|，并列时取字典序最小的 θ"""
    if len(theta) == 0:
        raise InvalidArgumentError("Θ₀ 为空")
    z = np.abs(z_statistics(sums, theta))
    best = int(np.argmax(z))
    return float(z[best]), theta[best]


def _log_eta_bound(y, n_in, n_out, n_total, params: TailBoundParams) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    n_in = np.asarray(n_in, dtype=np.float64)
    n_out = np.asarray(n_out, dtype=np.float64)
    n_total = np.asarray(n_total, dtype=np.float64)
    m3 = float(params.m) ** 3
    sigma2, m0 = params.sigma2, params.M0
    gaussian = LOG2 - y ** 2 * n_out * n_in / (4.0 * m3 * sigma2 * n_total)
    exponential = LOG2 - y * n_in / (2.0 * m0 * m3) + sigma2 * n_total * n_in / (4.0 * m0 ** 2 * m3 * n_out)
    # 高斯区: |I_θᶜ| <= σ²|W| / (y M₀)
    return np.where(y * m0 * n_out <= sigma2 * n_total, gaussian, exponential)


def eta_tail_bound(y: float, n_inside: int, n_outside: int, n_total: int, params: TailBoundParams) -> float:
    """单个 θ 的尾概率界，两种区间按 y = σ²|W|/(M₀|I_θᶜ|) 分界"""
    if not y > 0:
        raise InvalidArgumentError(f"y 必须 > 0: {y}")
    if n_inside > n_outside:
        raise InvalidArgumentError(f"要求 |I_θ| <= |I_θᶜ|: {n_inside} > {n_outside}")
    return float(np.exp(_log_eta_bound(y, n_inside, n_outside, n_total, params)))


@dataclass
class SizeGroups:
    """按不同 (|I_θ|, |I_θᶜ|) 分组的尺寸表"""
    n_inside: np.ndarray
    n_outside: np.ndarray
    multiplicity: np.ndarray

    def __len__(self) -> int:
        return len(self.multiplicity)

    @property
    def n_total(self) -> np.ndarray:
        return self.n_inside + self.n_outside


def group_sizes(sizes: Union[ThetaSet, SizeGroups, np.ndarray]) -> SizeGroups:
    """按不同的 (|I_θ|, |I_θᶜ|) 分组

    |I_θ| > |I_θᶜ| 的盒子与其补集交换角色（统计量只差一个符号）。
    """
    if isinstance(sizes, SizeGroups):
        return sizes
    pairs = sizes.sizes() if isinstance(sizes, ThetaSet) else np.asarray(sizes, dtype=np.int64).reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    if len(pairs) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return SizeGroups(empty, empty, empty)
    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    return SizeGroups(n_inside=unique[:, 0], n_outside=unique[:, 1], multiplicity=counts)


def log_family_tail_bound(y, sizes, params: TailBoundParams) -> float:
    groups = group_sizes(sizes)
    if len(groups) == 0:
        raise InvalidArgumentError("Θ₀ 为空")
    logs = _log_eta_bound(y, groups.n_inside, groups.n_outside, groups.n_total, params)
    return float(logsumexp(logs, b=groups.multiplicity))


def family_tail_bound(y, sizes, params: TailBoundParams) -> float:
    """P(max |η(θ)| >= y) 的上界：按尺寸分组求和，在对数空间计算"""
    return float(np.exp(log_family_tail_bound(y, sizes, params)))


def critical_value(sizes, params: TailBoundParams, alpha: float, tol: float = BISECTION_TOLERANCE) -> float:
    """使族尾概率界 <= α 的最小正 y（二分法）"""
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"α 必须位于 (0,1): {alpha}")
    grouped = group_sizes(sizes)
    log_alpha = math.log(alpha)
    hi = math.sqrt(params.sigma2)
    for _ in range(MAX_DOUBLINGS):
        if log_family_tail_bound(hi, grouped, params) <= log_alpha:
            break
        hi *= 2.0
    else:
        raise NoCriticalValueError(f"在 {MAX_DOUBLINGS} 次加倍内尾概率界未降到 α={alpha} 以下")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if log_family_tail_bound(mid, grouped, params) <= log_alpha:
            hi = mid
        else:
            lo = mid
    return hi


def critical_value_table(sizes, m_values: Sequence[int], sigma2_values: Sequence[float], alpha: float,
                         M0: Optional[float] = None) -> Dict[float, Dict[int, float]]:
    """临界值表：行为 σ²，列为 m（M₀ 缺省为 σ）"""
    groups = group_sizes(sizes)
    table: Dict[float, Dict[int, float]] = {}
    for sigma2 in sigma2_values:
        row = {}
        for m in m_values:
            row[int(m)] = critical_value(groups, TailBoundParams(m=int(m), sigma2=float(sigma2), M0=M0), alpha)
        table[float(sigma2)] = row
    return table


def p_value_bound(statistic: float, sizes, params: TailBoundParams) -> float:
    """p 值上界 min(1, 族尾概率界(T_W))"""
    if statistic < 0:
        raise InvalidArgumentError(f"统计量不能为负: {statistic}")
    if statistic == 0:
        return 1.0
    return float(min(1.0, family_tail_bound(statistic, sizes, params)))


def log10_p_value_bound(statistic: float, sizes, params: TailBoundParams) -> float:
    if statistic <= 0:
        return 0.0
    return min(0.0, log_family_tail_bound(statistic, sizes, params) / math.log(10.0))


def gaussian_regime_bound(y: float, n_theta: int, n_total: int, gamma0: float, params: TailBoundParams) -> float:
    """y < σ²/(M₀(1-γ₀)) 时的简化界 2|Θ₀| exp(-y²|W|γ₀(1-γ₀)/(4m³σ²))"""
    m3 = float(params.m) ** 3
    return 2.0 * n_theta * math.exp(-y * y * n_total * gamma0 * (1.0 - gamma0) / (4.0 * m3 * params.sigma2))


def exponential_regime_bound(y: float, n_theta: int, n_total: int, gamma0: float, params: TailBoundParams) -> float:
    """y > σ²/(M₀(1-γ₁)) 时的简化界 2|Θ₀| exp(-y γ₀|W|/(4M₀m³))"""
    m3 = float(params.m) ** 3
    return 2.0 * n_theta * math.exp(-y * gamma0 * n_total / (4.0 * params.M0 * m3))


def simplified_tail_bound(y: float, n_theta: int, n_total: int, gamma0: float, gamma1: float,
                          params: TailBoundParams) -> float:
    """只依赖 |Θ₀| 与 |W| 的简化族界

    y < σ²/(M₀(1-γ₀)) 时所有盒子都在高斯区，y > σ²/(M₀(1-γ₁)) 时都在指数区，
    中间区域取两项之和。
    """
    if not y > 0:
        raise InvalidArgumentError(f"y 必须 > 0: {y}")
    lower = params.sigma2 / (params.M0 * (1.0 - gamma0))
    upper = params.sigma2 / (params.M0 * (1.0 - gamma1)) if gamma1 < 1.0 else math.inf
    if y < lower:
        return gaussian_regime_bound(y, n_theta, n_total, gamma0, params)
    if y > upper:
        return exponential_regime_bound(y, n_theta, n_total, gamma0, params)
    return (gaussian_regime_bound(y, n_theta, n_total, gamma0, params)
            + exponential_regime_bound(y, n_theta, n_total, gamma0, params))


def admissible_m_bound(n_total: float, n_theta: int, gamma0: float, alpha: float) -> float:
    """可接受 m 的近似上界 (γ₀|W| / (4 ln(2|Θ₀|/α)))^{1/3}"""
    if not 0.0 < alpha < 1.0 or n_total <= 0 or n_theta <= 0 or gamma0 <= 0:
        raise InvalidArgumentError("admissible_m_bound 的参数必须为正且 α ∈ (0,1)")
    return (gamma0 * n_total / (4.0 * math.log(2.0 * n_theta / alpha))) ** (1.0 / 3.0)


def _lag_covariances(field_: ScalarField3, max_lag: int) -> np.ndarray:
    """h ∈ [0, max_lag]³ 上的经验协方差，K 与 K+h 各自取样本均值"""
    mask = field_.mask.astype(np.float64)
    a = np.where(field_.mask, field_.values, 0.0)
    centre = tuple(d - 1 for d in a.shape)
    window = tuple(slice(c, c + max_lag + 1) for c in centre)

    def corr(u, v):
        # out[c + h] = Σ_k u[k+h] v[k]
        return signal.correlate(u, v, mode="full", method="fft")[window]

    products = corr(a, a)
    count = np.rint(corr(mask, mask))
    sum_k = corr(mask, a)
    sum_kh = corr(a, mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = (products - sum_k * sum_kh / count) / (count - 1.0)
    cov[count < 2] = np.nan
    return cov


def covariance_profile(field_: ScalarField3, max_lag: int, mode: str = "correlation") -> np.ndarray:
    """ρ̂_max(i), i = 1..max_lag：滞后 h ∈ {1..i}³ 且最大分量为 i 时 ρ̂(h) 的最大值"""
    if mode not in ("correlation", "covariance"):
        raise InvalidArgumentError(f"未知模式: {mode}")
    if max_lag < 1 or max_lag >= min(field_.dims):
        raise InvalidArgumentError(f"max_lag 必须位于 [1, {min(field_.dims) - 1}]: {max_lag}")
    cov = _lag_covariances(field_, max_lag)
    variance = cov[0, 0, 0]
    if not variance > 0:
        raise DegenerateFieldError("随机场方差为0")
    if mode == "correlation":
        cov = cov / variance
    lag = np.arange(max_lag + 1)
    shell = np.maximum.reduce(np.meshgrid(lag, lag, lag, indexing="ij"))
    positive = np.minimum.reduce(np.meshgrid(lag, lag, lag, indexing="ij")) >= 1
    profile = np.empty(max_lag)
    for i in range(1, max_lag + 1):
        values = cov[(shell == i) & positive]
        profile[i - 1] = np.nanmax(values)
    return profile


def estimate_m(field_: ScalarField3, eps0: float = DEFAULT_EPS0, max_lag: Optional[int] = None,
               mode: str = "correlation") -> int:
    """取最小的 m，使 i >= m 时 ρ̂_max(i) <= ε₀"""
    if max_lag is None:
        max_lag = max(1, min(15, min(field_.dims) // 4))
    profile = covariance_profile(field_, max_lag, mode)
    above = np.nonzero(profile > eps0)[0]
    if len(above) == 0:
        return 1
    m = int(above[-1]) + 2
    if m > max_lag:
        logger.warning(f"ρ̂_max 在最大滞后 {max_lag} 处仍高于 ε₀={eps0}，m 估计可能偏小")
    return m


SUITE_PRESETS: Dict[str, Dict[str, Any]] = {
    "directions": {"theta": dict(offset_step=8, extent_step=8, min_extent=22, gamma0=0.05, gamma1=0.5),
                   "tail": dict(m=5, sigma2=0.2, M0=0.5)},
    "directions_real": {"theta": dict(offset_step=8, extent_step=8, min_extent=22, gamma0=0.05, gamma1=0.5),
                        "tail": dict(m=7, sigma2=0.2, M0=0.5)},
    "entropy": {"theta": dict(offset_step=2, extent_step=2, min_extent=4, gamma0=0.05, gamma1=0.5),
                "tail": dict(m=1, sigma2=0.5, M0=None)},
}


def suite_parameters(kind: str) -> AttributeTestSettings:
    """方向属性与熵属性的默认检验设置"""
    if kind not in SUITE_PRESETS:
        raise InvalidArgumentError(f"未知的预设: {kind}")
    preset = SUITE_PRESETS[kind]
    return AttributeTestSettings(theta=ThetaGrid(**preset["theta"]), tail=TailBoundParams(**preset["tail"]))


def evaluate_attribute(field_: ScalarField3, settings: AttributeTestSettings, alpha: float,
                       attribute: str = "") -> TestResult:
    """单个属性：扫描、临界值、p 值上界与判决"""
    theta = enumerate_theta(field_.dims, field_.mask, settings.theta)
    sums = build_prefix_sums(field_)
    statistic, box = scan_statistic(sums, theta)
    grouped = group_sizes(theta)
    y_alpha = critical_value(grouped, settings.tail, alpha)
    p_bound = p_value_bound(statistic, grouped, settings.tail)
    decision = "reject" if statistic >= y_alpha else "accept"
    logger.info(f"属性 {attribute}: T_W={statistic:.5f}, y_α={y_alpha:.5f}, p<={p_bound:.3g}, {decision}")
    return TestResult(
        attribute=attribute,
        statistic=statistic,
        argmax_box=box,
        y_alpha=y_alpha,
        p_bound=p_bound,
        log10_p_bound=log10_p_value_bound(statistic, grouped, settings.tail),
        decision=decision,
        alpha=alpha,
        sample_variance=field_.sample_variance(),
        theta_count=len(theta),
        parameters={"theta": asdict(settings.theta), "tail": asdict(settings.tail)},
    )


def run_attribute_suite(
    x_field: ScalarField3,
    y_field: ScalarField3,
    z_field: ScalarField3,
    entropy_field: ScalarField3,
    direction_settings: AttributeTestSettings,
    entropy_settings: AttributeTestSettings,
    alpha: float = 0.05,
) -> SuiteResult:
    """四假设联合检验：每个属性用 α/4，任一属性拒绝则整体拒绝"""
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"α 必须位于 (0,1): {alpha}")
    per_test = alpha / 4.0
    results = [
        evaluate_attribute(x_field, direction_settings, per_test, "x"),
        evaluate_attribute(y_field, direction_settings, per_test, "y"),
        evaluate_attribute(z_field, direction_settings, per_test, "z"),
        evaluate_attribute(entropy_field, entropy_settings, per_test, "entropy"),
    ]
    return SuiteResult(results=results, alpha=alpha)


@dataclass
class ExceedanceCheck:
    """尾概率界的蒙特卡洛验证结果"""
    y_grid: np.ndarray
    frequency: np.ndarray
    bound: np.ndarray
    standard_error: np.ndarray

    @property
    def valid(self) -> bool:
        return bool(np.all(self.frequency <= self.bound + 3.0 * self.standard_error))


def empirical_critical_value(dims: Tuple[int, int, int], m: int, grid: ThetaGrid, reps: int, alpha: float,
                             rng: np.random.Generator) -> Tuple[float, np.ndarray]:
    """H₀ 下分块高斯场 T_W 的经验 (1-α) 分位数"""
    theta = enumerate_theta(dims, None, grid)
    stats = np.empty(reps)
    for r in range(reps):
        sums = build_prefix_sums(generate_block_gaussian_field(dims, m, rng))
        stats[r], _ = scan_statistic(sums, theta)
    return float(np.quantile(stats, 1.0 - alpha)), stats


def tail_bound_exceedance(dims: Tuple[int, int, int], m: int, grid: ThetaGrid, reps: int,
                          y_grid: Sequence[float], rng: np.random.Generator) -> ExceedanceCheck:
    """max|η(θ)| 的经验超越频率与族尾概率界（σ² = 1, M₀ = σ）的比较"""
    theta = enumerate_theta(dims, None, grid)
    params = TailBoundParams(m=m, sigma2=1.0)
    grouped = group_sizes(theta)
    y_grid = np.asarray(y_grid, dtype=np.float64)
    maxima = np.empty(reps)
    for r in range(reps):
        sums = build_prefix_sums(generate_block_gaussian_field(dims, m, rng))
        maxima[r] = np.max(np.abs(z_statistics(sums, theta)))
    frequency = (maxima[None, :] >= y_grid[:, None]).mean(axis=1)
    bound = np.array([min(1.0, family_tail_bound(y, grouped, params)) for y in y_grid])
    se = np.sqrt(np.maximum(bound * (1.0 - bound), 0.0) / reps)
    return ExceedanceCheck(y_grid=y_grid, frequency=frequency, bound=bound, standard_error=se)
