#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - SAEM 混合分离

两分量高斯混合的 SAEM 拟合（EM 分支与随机 SEM 分支按 λ_k 混合），
基于邻域一致性的空间平滑后处理，以及窗口的均匀/异常分类。
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.special import logsumexp
from sklearn.neighbors import KDTree

from .exceptions import (
    DegenerateComponentError,
    DegenerateFitError,
    InvalidArgumentError,
    SmoothingFailedError,
)

logger = logging.getLogger(__name__)

REGULARIZATION_FLOOR = 1e-8
DEGENERATE_WEIGHT = 1e-8
MAX_SEM_RESAMPLES = 100
LOG_2PI = float(np.log(2.0 * np.pi))


class WindowLabel(Enum):
    """窗口分类"""
    HOMOGENEOUS = "homogeneous"
    ANOMALY = "anomaly"


def _as_data(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidArgumentError(f"数据必须是 (n, d) 数组: {arr.shape}")
    return arr


def _regularize(sigma: np.ndarray) -> Tuple[np.ndarray, bool]:
    """对称化，并保证最小特征值不低于 1e-8·trace/d"""
    sigma = 0.5 * (sigma + sigma.T)
    dim = sigma.shape[0]
    trace = float(np.trace(sigma))
    floor = REGULARIZATION_FLOOR * trace / dim if trace > 0 else REGULARIZATION_FLOOR
    smallest = float(np.linalg.eigvalsh(sigma)[0])
    if smallest >= floor:
        return sigma, False
    return sigma + (floor - smallest) * np.eye(dim), True


@dataclass
class MixtureParams:
    """φ(x) = β φ(x; μ₁, Σ₁) + (1-β) φ(x; μ₂, Σ₂)"""
    beta: float
    mu1: np.ndarray
    sigma1: np.ndarray
    mu2: np.ndarray
    sigma2: np.ndarray
    regularized: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidArgumentError(f"混合权重 β 必须位于 [0,1]: {self.beta}")
        self.mu1 = np.atleast_1d(np.asarray(self.mu1, dtype=np.float64))
        self.mu2 = np.atleast_1d(np.asarray(self.mu2, dtype=np.float64))
        dim = len(self.mu1)
        if len(self.mu2) != dim:
            raise InvalidArgumentError("两个分量的维数不一致")
        covariances = []
        for sigma in (self.sigma1, self.sigma2):
            sigma = np.asarray(sigma, dtype=np.float64).reshape(dim, dim)
            sigma, flagged = _regularize(sigma)
            if flagged:
                self.regularized = True
            covariances.append(sigma)
        self.sigma1, self.sigma2 = covariances
        if self.regularized:
            logger.debug("协方差矩阵接近奇异，已正则化")

    @property
    def dim(self) -> int:
        return len(self.mu1)

    def swapped(self) -> "MixtureParams":
        return MixtureParams(beta=1.0 - self.beta, mu1=self.mu2, sigma1=self.sigma2,
                             mu2=self.mu1, sigma2=self.sigma1, regularized=self.regularized)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "beta": float(self.beta),
            "mu1": self.mu1.tolist(),
            "sigma1": self.sigma1.tolist(),
            "mu2": self.mu2.tolist(),
            "sigma2": self.sigma2.tolist(),
            "regularized": bool(self.regularized),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MixtureParams":
        return cls(beta=data["beta"], mu1=data["mu1"], sigma1=data["sigma1"],
                   mu2=data["mu2"], sigma2=data["sigma2"], regularized=data.get("regularized", False))


@dataclass
class PosteriorField:
    """每个窗口属于第一分量的后验概率 q_l，以及窗口索引与坐标"""
    q: np.ndarray
    indices: Optional[np.ndarray] = None
    coordinates: Optional[np.ndarray] = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        if np.any(self.q < 0.0) or np.any(self.q > 1.0) or np.any(np.isnan(self.q)):
            raise InvalidArgumentError("后验概率必须位于 [0,1]")
        for name in ("indices", "coordinates"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value).reshape(-1, 3)
                if len(value) != len(self.q):
                    raise InvalidArgumentError(f"{name} 的行数与 q 不一致")
                setattr(self, name, value)

    def __len__(self) -> int:
        return len(self.q)

    def with_q(self, q: np.ndarray) -> "PosteriorField":
        return PosteriorField(q=q, indices=self.indices, coordinates=self.coordinates)


@dataclass
class SaemConfig:
    """SAEM 与空间平滑参数"""
    max_iterations: int = 500
    tolerance: float = 1e-4
    radius: Optional[float] = None
    neighbour_threshold: int = 3
    n_fields: int = 1000
    max_attempts: int = 10000
    init_high: float = 0.9

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations 必须 >= 1")
        if not self.tolerance > 0:
            raise InvalidArgumentError("tolerance 必须 > 0")
        if self.radius is not None and not self.radius > 0:
            raise InvalidArgumentError("邻域半径必须 > 0")
        if self.neighbour_threshold < 0 or self.n_fields < 1 or self.max_attempts < 1:
            raise InvalidArgumentError("空间平滑参数无效")
        if not 0.5 < self.init_high < 1.0:
            raise InvalidArgumentError("init_high 必须位于 (0.5, 1)")

    @staticmethod
    def step_size(k: int) -> float:
        """λ_k = 50 / (50 + k²)"""
        return 50.0 / (50.0 + float(k) ** 2)


@dataclass
class SaemResult:
    """SAEM 拟合结果"""
    params: MixtureParams
    posterior: PosteriorField
    iterations: int
    converged: bool
    history: List[float] = field(default_factory=list)

    @property
    def beta_em(self) -> float:
        return float(self.params.beta)


@dataclass
class Localization:
    """异常定位结果"""
    fit: SaemResult
    posterior: PosteriorField
    labels: np.ndarray
    beta_hat: float
    spatial: bool

    @property
    def anomaly_mask(self) -> np.ndarray:
        return np.array([label is WindowLabel.ANOMALY for label in self.labels], dtype=bool)


def _log_gaussian(data: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    lower = scipy.linalg.cholesky(sigma, lower=True)
    soln = scipy.linalg.solve_triangular(lower, (data - mu).T, lower=True)
    dim = data.shape[1]
    return -0.5 * dim * LOG_2PI - np.sum(np.log(np.diag(lower))) - 0.5 * np.sum(soln ** 2, axis=0)


def _component_logs(data: np.ndarray, params: MixtureParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log([params.beta, 1.0 - params.beta])
    return np.stack([
        log_w[0] + _log_gaussian(data, params.mu1, params.sigma1),
        log_w[1] + _log_gaussian(data, params.mu2, params.sigma2),
    ], axis=1)


def mixture_density(x, params: MixtureParams) -> Union[float, np.ndarray]:
    """混合密度 β φ(x;δ₁) + (1-β) φ(x;δ₂)"""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim <= 1 and (arr.ndim == 0 or len(arr) == params.dim)
    data = arr.reshape(1, -1) if single else _as_data(arr)
    density = np.exp(logsumexp(_component_logs(data, params), axis=1))
    return float(density[0]) if single else density


def log_likelihood(data, params: MixtureParams) -> float:
    """观测数据对数似然"""
    return float(np.sum(logsumexp(_component_logs(_as_data(data), params), axis=1)))


def e_step(data, params: MixtureParams) -> PosteriorField:
    """q_l = β φ(x_l;δ₁) / φ(x_l)，在对数空间计算"""
    logs = _component_logs(_as_data(data), params)
    q = np.exp(logs[:, 0] - logsumexp(logs, axis=1))
    return PosteriorField(q=np.clip(q, 0.0, 1.0))


def _weighted_moments(data: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    total = weights.sum()
    mu = weights @ data / total
    diff = data - mu
    return mu, (diff * weights[:, None]).T @ diff / total


def _posterior_values(q) -> np.ndarray:
    if isinstance(q, PosteriorField):
        return q.q
    return np.asarray(q, dtype=np.float64).reshape(-1)


def em_m_step(data, q) -> MixtureParams:
    """按后验加权的均值、协方差与权重 β = mean(q)"""
    data = _as_data(data)
    q = _posterior_values(q)
    if len(q) != len(data):
        raise InvalidArgumentError("后验概率数量与数据行数不一致")
    w1, w2 = q, 1.0 - q
    if w1.sum() < DEGENERATE_WEIGHT or w2.sum() < DEGENERATE_WEIGHT:
        raise DegenerateComponentError(f"分量总权重过小: {w1.sum():.3g}, {w2.sum():.3g}")
    mu1, sigma1 = _weighted_moments(data, w1)
    mu2, sigma2 = _weighted_moments(data, w2)
    return MixtureParams(beta=float(q.mean()), mu1=mu1, sigma1=sigma1, mu2=mu2, sigma2=sigma2)


def _group_params(data: np.ndarray, labels: np.ndarray) -> MixtureParams:
    n1 = int(labels.sum())
    groups = []
    for members in (labels, ~labels):
        mu = data[members].mean(axis=0)
        diff = data[members] - mu
        groups.append((mu, diff.T @ diff / len(diff)))
    (mu1, s1), (mu2, s2) = groups
    return MixtureParams(beta=n1 / len(labels), mu1=mu1, sigma1=s1, mu2=mu2, sigma2=s2)


def sem_step(data, q, rng: np.random.Generator) -> Tuple[np.ndarray, MixtureParams]:
    """按 P(y_l = 1) = q_l 抽取硬标签，再按两组分别估计参数

    q 全部为 0/1 且有一组为空时，空组沿用另一组的统计量。
    """
    data = _as_data(data)
    q = _posterior_values(q)
    deterministic = np.all((q == 0.0) | (q == 1.0))
    for _ in range(MAX_SEM_RESAMPLES):
        labels = rng.random(len(q)) < q
        n1 = int(labels.sum())
        if 0 < n1 < len(q):
            return labels, _group_params(data, labels)
        if deterministic:
            mu = data.mean(axis=0)
            diff = data - mu
            sigma = diff.T @ diff / len(diff)
            return labels, MixtureParams(beta=n1 / len(q), mu1=mu, sigma1=sigma, mu2=mu, sigma2=sigma)
    raise DegenerateComponentError(f"SEM 在 {MAX_SEM_RESAMPLES} 次重抽后仍有空分量")


def initial_posterior(data, high: float = 0.9) -> np.ndarray:
    """第一主成分中位数分割：一侧 q = high，另一侧 q = 1 - high"""
    data = _as_data(data)
    centred = data - data.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    projection = centred @ vt[0]
    return np.where(projection > np.median(projection), high, 1.0 - high)


def _is_reversed(params: MixtureParams) -> bool:
    return tuple(params.mu1) > tuple(params.mu2)


def saem_fit(data, init: Optional[Union[MixtureParams, np.ndarray]] = None, cfg: Optional[SaemConfig] = None,
             rng: Optional[np.random.Generator] = None) -> SaemResult:
    """SAEM 迭代：EM 与 SEM 分支共用 q^{(k-1)}，按 λ_k 混合后验

    Σ|q^{(k-1)} - q^{(k)}| <= ε 时停止；最终参数是 EM 分支对最终后验的估计。
    """
    cfg = cfg or SaemConfig()
    rng = rng if rng is not None else np.random.default_rng()
    data = _as_data(data)
    if len(data) < 2 or len(np.unique(data, axis=0)) < 2:
        raise DegenerateFitError("SAEM 需要至少两个不同的数据点")

    if init is None:
        q = initial_posterior(data, cfg.init_high)
    elif isinstance(init, MixtureParams):
        q = e_step(data, init).q
    else:
        q = _posterior_values(init).copy()
    if len(q) != len(data):
        raise InvalidArgumentError("初始后验数量与数据行数不一致")

    # 分量顺序规范化后再迭代，交换初值只交换输出
    try:
        reverse = _is_reversed(em_m_step(data, q))
    except DegenerateComponentError as e:
        raise DegenerateFitError(f"初始后验无效: {e}") from e
    if reverse:
        q = 1.0 - q

    history: List[float] = []
    converged = False
    iterations = 0
    params = None
    for k in range(1, cfg.max_iterations + 1):
        iterations = k
        try:
            params = em_m_step(data, q)
            q_em = e_step(data, params).q
            _, sem_params = sem_step(data, q, rng)
            q_sem = e_step(data, sem_params).q
        except DegenerateComponentError as e:
            state = {"iteration": k, "q": q, "params": None if params is None else params.to_dict()}
            logger.error(f"SAEM 第 {k} 次迭代失败: {e}")
            raise DegenerateFitError(f"SAEM 在第 {k} 次迭代退化: {e}", last_state=state) from e
        lam = SaemConfig.step_size(k)
        q_new = np.clip(lam * q_sem + (1.0 - lam) * q_em, 0.0, 1.0)
        delta = float(np.abs(q_new - q).sum())
        history.append(delta)
        q = q_new
        if delta <= cfg.tolerance:
            converged = True
            break

    if not converged:
        logger.warning(f"SAEM 在 {cfg.max_iterations} 次迭代内未收敛，最后变化量 {history[-1]:.3g}")
    try:
        params = em_m_step(data, q)
    except DegenerateComponentError as e:
        raise DegenerateFitError(f"最终参数估计退化: {e}", last_state={"iteration": iterations, "q": q}) from e
    if reverse:
        params, q = params.swapped(), 1.0 - q
    logger.info(f"SAEM 完成: {iterations} 次迭代, 收敛={converged}, β={params.beta:.4f}")
    return SaemResult(params=params, posterior=PosteriorField(q=q), iterations=iterations,
                      converged=converged, history=history)


def _lattice_step(coordinates: np.ndarray) -> float:
    steps = []
    for col in range(coordinates.shape[1]):
        diffs = np.diff(np.unique(coordinates[:, col]))
        if len(diffs):
            steps.append(diffs.min())
    if not steps:
        raise InvalidArgumentError("无法从坐标推断邻域半径，请显式设置 radius")
    return float(min(steps))


def neighbour_graph(coordinates: np.ndarray, radius: float) -> sparse.csr_matrix:
    """‖v_l - v_i‖∞ <= r 的邻接矩阵（不含自身）"""
    coordinates = np.asarray(coordinates, dtype=np.float64).reshape(-1, 3)
    tree = KDTree(coordinates, metric="chebyshev")
    neighbours = tree.query_radius(coordinates, r=radius * (1.0 + 1e-9))
    rows = np.repeat(np.arange(len(coordinates)), [len(nb) for nb in neighbours])
    cols = np.concatenate(neighbours) if len(neighbours) else np.zeros(0, dtype=np.int64)
    keep = rows != cols
    data = np.ones(int(keep.sum()), dtype=np.int64)
    return sparse.csr_matrix((data, (rows[keep], cols[keep])), shape=(len(coordinates),) * 2)


def agreement_counts(labels: np.ndarray, adjacency: sparse.csr_matrix) -> np.ndarray:
    """a_l：与窗口 l 标签相同的邻居个数"""
    labels = np.asarray(labels, dtype=bool)
    ones = adjacency @ labels.astype(np.int64)
    degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
    return np.where(labels, ones, degree - ones)


def is_admissible(labels: np.ndarray, adjacency: sparse.csr_matrix, threshold: int) -> bool:
    """邻居数不少于 a 的窗口都满足 a_l >= a"""
    degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
    return not np.any((agreement_counts(labels, adjacency) < threshold) & (degree >= threshold))


def _admissible_field(q: np.ndarray, adjacency: sparse.csr_matrix, degree: np.ndarray, cfg: SaemConfig,
                      rng: np.random.Generator) -> np.ndarray:
    checked = degree >= cfg.neighbour_threshold
    for _ in range(cfg.max_attempts):
        labels = rng.random(len(q)) < q
        bad = (agreement_counts(labels, adjacency) < cfg.neighbour_threshold) & checked
        if not bad.any():
            return labels
        labels[bad] = ~labels[bad]
        bad = (agreement_counts(labels, adjacency) < cfg.neighbour_threshold) & checked
        if not bad.any():
            return labels
    raise SmoothingFailedError(f"{cfg.max_attempts} 次尝试内未找到可接受的标签场")


def sample_admissible_fields(posterior: PosteriorField, cfg: SaemConfig, rng: np.random.Generator) -> np.ndarray:
    """抽取 K 个可接受的标签场，形状 (K, n)；每个场使用独立的子随机流"""
    if posterior.coordinates is None:
        raise InvalidArgumentError("空间平滑需要窗口坐标")
    radius = cfg.radius if cfg.radius is not None else _lattice_step(posterior.coordinates)
    adjacency = neighbour_graph(posterior.coordinates, radius)
    degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
    exempt = int((degree < cfg.neighbour_threshold).sum())
    if exempt:
        logger.warning(f"{exempt} 个窗口邻居数少于 a={cfg.neighbour_threshold}，不参与可接受性检查")
    children = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(cfg.n_fields)
    fields = np.empty((cfg.n_fields, len(posterior)), dtype=bool)
    for k, child in enumerate(children):
        fields[k] = _admissible_field(posterior.q, adjacency, degree, cfg, np.random.default_rng(child))
    return fields


def spatial_smooth(posterior: PosteriorField, cfg: Optional[SaemConfig] = None,
                   rng: Optional[np.random.Generator] = None) -> PosteriorField:
    """以 q 为成功概率抽取 K 个可接受标签场，取平均作为平滑后的后验"""
    cfg = cfg or SaemConfig()
    rng = rng if rng is not None else np.random.default_rng()
    fields = sample_admissible_fields(posterior, cfg, rng)
    smoothed = posterior.with_q(fields.mean(axis=0))
    logger.info(f"空间平滑完成: K={cfg.n_fields}, 平均后验 {smoothed.q.mean():.4f}")
    return smoothed


def classify(posterior: Union[PosteriorField, np.ndarray], beta_hat: float) -> np.ndarray:
    """多数分量为均匀材料；β̂ < 0.5 时两个分量的角色互换"""
    q = _posterior_values(posterior)
    first_is_homogeneous = beta_hat >= 0.5
    homogeneous = (q >= 0.5) if first_is_homogeneous else (q < 0.5)
    return np.where(homogeneous, WindowLabel.HOMOGENEOUS, WindowLabel.ANOMALY)


def three_sigma_baseline(values) -> np.ndarray:
    """3σ 规则：偏离均值超过 3 倍样本标准差的值标记为异常"""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(values) < 2:
        raise InvalidArgumentError("3σ 规则至少需要两个值")
    std = values.std(ddof=1)
    if std == 0:
        return np.zeros(len(values), dtype=bool)
    return np.abs(values - values.mean()) > 3.0 * std


def localize_anomaly(data, coordinates: Optional[np.ndarray], cfg: Optional[SaemConfig] = None,
                     rng: Optional[np.random.Generator] = None, spatial: bool = True,
                     indices: Optional[np.ndarray] = None) -> Localization:
    """SAEM 拟合 +（可选）空间平滑 + 分类"""
    cfg = cfg or SaemConfig()
    rng = rng if rng is not None else np.random.default_rng()
    fit = saem_fit(data, cfg=cfg, rng=rng)
    posterior = PosteriorField(q=fit.posterior.q, indices=indices, coordinates=coordinates)
    if spatial:
        posterior = spatial_smooth(posterior, cfg, rng)
    beta_hat = float(posterior.q.mean())
    labels = classify(posterior, beta_hat)
    n_anomaly = int(sum(label is WindowLabel.ANOMALY for label in labels))
    logger.info(f"异常定位: 空间平滑={spatial}, β̂={beta_hat:.4f}, 异常窗口 {n_anomaly}/{len(labels)}")
    return Localization(fit=fit, posterior=posterior, labels=labels, beta_hat=beta_hat, spatial=spatial)


def balanced_misclassification(predicted, truth) -> float:
    """两类各自错分率的平均；只出现一类时取该类错分率"""
    predicted = np.asarray(predicted, dtype=bool).reshape(-1)
    truth = np.asarray(truth, dtype=bool).reshape(-1)
    if len(predicted) != len(truth):
        raise InvalidArgumentError("预测与真值长度不一致")
    rates = [float(np.mean(predicted[truth == cls] != cls)) for cls in (True, False) if np.any(truth == cls)]
    if not rates:
        raise InvalidArgumentError("真值为空")
    return float(np.mean(rates))
