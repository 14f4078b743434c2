#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 合成数据生成

随机序贯吸附（RSA）生成互不相交的直纤维系统（纤维按球柱体处理），
计算小单元平均局部方向场、体素化，以及用于检验校准的分块高斯随机场。
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import InvalidArgumentError, PartialPackingError
from .field_types import BoxParam, DirectionField, GridSpec, ScalarField3
from .sphere_core import AcgParams, Axis, principal_axes, sample_acg

logger = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 10000
PARALLEL_EPSILON = 1e-12


@dataclass
class Fibre:
    """直纤维：中心线端点 p0、p1 与半径（体素）"""
    p0: np.ndarray
    p1: np.ndarray
    radius: float
    layer: int = 0

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=np.float64).reshape(3)
        self.p1 = np.asarray(self.p1, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise InvalidArgumentError(f"纤维半径必须为正: {self.radius}")
        if self.length <= 0:
            raise InvalidArgumentError("纤维长度必须为正")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    @property
    def direction(self) -> np.ndarray:
        return (self.p1 - self.p0) / self.length

    def to_dict(self) -> Dict[str, float]:
        return {
            "p0x": self.p0[0], "p0y": self.p0[1], "p0z": self.p0[2],
            "p1x": self.p1[0], "p1y": self.p1[1], "p1z": self.p1[2],
            "radius": self.radius,
            "layer": self.layer,
        }


@dataclass
class LayerSpec:
    """一个层：沿层叠轴的区间 [lower, upper)、方向分布与纤维数"""
    lower: float
    upper: float
    acg: AcgParams
    count: int = 0

    def __post_init__(self):
        if self.upper <= self.lower:
            raise InvalidArgumentError(f"层区间无效: [{self.lower}, {self.upper})")
        if self.count < 0:
            raise InvalidArgumentError(f"纤维数不能为负: {self.count}")


@dataclass
class RsaConfig:
    """RSA 配置，各层沿 slab_axis 划分整个区域"""
    dims: Tuple[int, int, int]
    layers: List[LayerSpec] = field(default_factory=list)
    fibre_length: float = 100.0
    radius: float = 4.0
    slab_axis: Axis = Axis.Z
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    seed: Optional[int] = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.slab_axis = Axis.parse(self.slab_axis)
        if self.fibre_length <= 0 or self.radius <= 0:
            raise InvalidArgumentError("纤维长度与半径必须为正")
        if self.max_attempts < 1:
            raise InvalidArgumentError("最大尝试次数必须 >= 1")
        if self.layers:
            extent = self.dims[self.slab_axis.value]
            bounds = sorted((layer.lower, layer.upper) for layer in self.layers)
            if bounds[0][0] != 0 or bounds[-1][1] != extent:
                raise InvalidArgumentError(f"各层必须覆盖 [0, {extent})")
            for (_, upper), (lower, _) in zip(bounds[:-1], bounds[1:]):
                if upper != lower:
                    raise InvalidArgumentError("各层必须首尾相接、互不重叠")

    @property
    def fibre_volume(self) -> float:
        """球柱体体积"""
        r = self.radius
        return math.pi * r * r * self.fibre_length + 4.0 / 3.0 * math.pi * r ** 3

    def layer_of(self, coordinate: np.ndarray) -> np.ndarray:
        """沿层叠轴坐标所属的层编号"""
        coordinate = np.asarray(coordinate, dtype=np.float64)
        labels = np.full(coordinate.shape, -1, dtype=np.int64)
        for idx, layer in enumerate(self.layers):
            inside = (coordinate >= layer.lower) & (coordinate < layer.upper)
            labels[inside] = idx
        return labels


def segment_distance(a0, a1, b0, b1) -> float:
    """两条闭线段之间的最小欧氏距离

    按参数化最近点的分情况裁剪求解：先求两条直线的最近点，
    再依次把落在线段外的参数截断到端点所在的边。
    """
    a0, a1, b0, b1 = (np.asarray(p, dtype=np.float64) for p in (a0, a1, b0, b1))
    u = a1 - a0
    v = b1 - b0
    w = a0 - b0
    a = float(u @ u)
    b = float(u @ v)
    c = float(v @ v)
    d = float(u @ w)
    e = float(v @ w)
    if a == 0.0 or c == 0.0:
        raise InvalidArgumentError("线段长度为0")
    denom = a * c - b * b
    s_num, s_den = 0.0, denom
    t_num, t_den = 0.0, denom

    if denom < PARALLEL_EPSILON * a * c:
        # 近似平行
        s_num, s_den = 0.0, 1.0
        t_num, t_den = e, c
    else:
        s_num = b * e - c * d
        t_num = a * e - b * d
        if s_num < 0.0:
            s_num, t_num, t_den = 0.0, e, c
        elif s_num > s_den:
            s_num, t_num, t_den = s_den, e + b, c

    if t_num < 0.0:
        t_num = 0.0
        if -d < 0.0:
            s_num = 0.0
        elif -d > a:
            s_num = s_den
        else:
            s_num, s_den = -d, a
    elif t_num > t_den:
        t_num = t_den
        if -d + b < 0.0:
            s_num = 0.0
        elif -d + b > a:
            s_num = s_den
        else:
            s_num, s_den = -d + b, a

    sc = 0.0 if s_num == 0.0 else s_num / s_den
    tc = 0.0 if t_num == 0.0 else t_num / t_den
    return float(np.linalg.norm(w + sc * u - tc * v))


def segment_distances(p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """一条线段到多条线段的最小距离（向量化版本，q0/q1 形状为 (n,3)）"""
    q0 = np.asarray(q0, dtype=np.float64).reshape(-1, 3)
    q1 = np.asarray(q1, dtype=np.float64).reshape(-1, 3)
    d1 = np.asarray(p1, dtype=np.float64) - np.asarray(p0, dtype=np.float64)
    d2 = q1 - q0
    r = np.asarray(p0, dtype=np.float64) - q0
    a = float(d1 @ d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = r @ d1
    b = d2 @ d1
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > PARALLEL_EPSILON * a * e, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / e
    low = t < 0.0
    high = t > 1.0
    s = np.where(low, np.clip(-c / a, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - c) / a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    closest_p = np.asarray(p0, dtype=np.float64) + s[:, None] * d1
    closest_q = q0 + t[:, None] * d2
    return np.linalg.norm(closest_p - closest_q, axis=1)


class _CentreHash:
    """按纤维中心分桶的均匀空间哈希，桶边长不小于可能碰撞的中心距"""

    def __init__(self, cell_size: float):
        self.cell_size = cell_size
        self.buckets = defaultdict(list)

    def _key(self, point: np.ndarray) -> Tuple[int, int, int]:
        return tuple(int(v) for v in np.floor(point / self.cell_size))

    def add(self, point: np.ndarray, index: int):
        self.buckets[self._key(point)].append(index)

    def nearby(self, point: np.ndarray) -> List[int]:
        kx, ky, kz = self._key(point)
        found = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    found.extend(self.buckets.get((kx + dx, ky + dy, kz + dz), ()))
        return found


def generate_rsa(config: RsaConfig, rng: Optional[np.random.Generator] = None) -> List[Fibre]:
    """随机序贯吸附：逐根放置纤维，与已放置纤维的中心线距离必须 >= 2r"""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dims = np.array(config.dims, dtype=np.float64)
    radius = float(config.radius)
    half = 0.5 * float(config.fibre_length)
    slab = config.slab_axis.value
    hash_grid = _CentreHash(config.fibre_length + 2.0 * radius)

    fibres: List[Fibre] = []
    total = sum(layer.count for layer in config.layers)
    starts = np.empty((total, 3))
    ends = np.empty((total, 3))
    logger.info(f"开始 RSA 模拟: 区域 {config.dims}, 目标纤维数 {total}")

    for layer_id, layer in enumerate(config.layers):
        low = np.zeros(3)
        high = dims.copy()
        low[slab] = max(low[slab], layer.lower)
        high[slab] = min(high[slab], layer.upper)
        for _ in range(layer.count):
            placed = False
            for _attempt in range(config.max_attempts):
                direction = sample_acg(layer.acg, rng)
                centre = low + (high - low) * rng.random(3)
                p0 = centre - half * direction
                p1 = centre + half * direction
                # 球柱体必须完全位于区域内
                if np.any(np.minimum(p0, p1) < radius) or np.any(np.maximum(p0, p1) > dims - radius):
                    continue
                candidates = hash_grid.nearby(centre)
                if candidates:
                    dist = segment_distances(p0, p1, starts[candidates], ends[candidates])
                    if np.any(dist < 2.0 * radius):
                        continue
                hash_grid.add(centre, len(fibres))
                starts[len(fibres)] = p0
                ends[len(fibres)] = p1
                fibres.append(Fibre(p0=p0, p1=p1, radius=radius, layer=layer_id))
                placed = True
                break
            if not placed:
                raise PartialPackingError(
                    f"第 {layer_id} 层在 {config.max_attempts} 次尝试内无法放置新纤维，已放置 {len(fibres)} 根",
                    achieved_count=len(fibres),
                    fibres=fibres,
                )
    logger.info(f"RSA 模拟完成: {len(fibres)} 根纤维")
    return fibres


def _centreline_pieces(fibre: Fibre, cell_edge: int) -> Tuple[np.ndarray, np.ndarray]:
    """把中心线按小单元边界切段，返回每段中点所在单元索引和段长"""
    p0, p1 = fibre.p0, fibre.p1
    delta = p1 - p0
    cuts = [np.array([0.0, 1.0])]
    for j in range(3):
        if delta[j] == 0.0:
            continue
        lo, hi = sorted((p0[j], p1[j]))
        planes = np.arange(math.floor(lo / cell_edge) + 1, math.ceil(hi / cell_edge)) * cell_edge
        if len(planes):
            cuts.append((planes - p0[j]) / delta[j])
    ts = np.unique(np.clip(np.concatenate(cuts), 0.0, 1.0))
    mids = 0.5 * (ts[:-1] + ts[1:])
    cells = np.floor((p0 + mids[:, None] * delta) / cell_edge).astype(np.int64)
    return cells, np.diff(ts) * fibre.length


def local_direction_field(
    fibres: Sequence[Fibre],
    cell_edge: int,
    dims: Tuple[int, int, int],
    window_factor: int = 5,
    min_length: Optional[float] = None,
) -> DirectionField:
    """小单元平均局部方向：落在单元内的中心线段按长度加权，取散布矩阵主轴

    单元内中心线总长度低于 min_length（默认 Δ/2）的单元视为未占据。
    """
    grid = GridSpec.from_volume(dims, cell_edge, window_factor)
    if min_length is None:
        min_length = 0.5 * cell_edge
    if not fibres:
        return DirectionField.empty(grid)

    shape = np.array(grid.cells)
    cell_chunks, length_chunks, dir_chunks = [], [], []
    for fibre in fibres:
        cells, lengths = _centreline_pieces(fibre, cell_edge)
        keep = np.all((cells >= 0) & (cells < shape), axis=1) & (lengths > 0)
        if not np.any(keep):
            continue
        cell_chunks.append(cells[keep])
        length_chunks.append(lengths[keep])
        dir_chunks.append(np.repeat(fibre.direction[None], int(keep.sum()), axis=0))
    if not cell_chunks:
        return DirectionField.empty(grid)

    cells = np.concatenate(cell_chunks)
    lengths = np.concatenate(length_chunks)
    dirs = np.concatenate(dir_chunks)
    flat = np.ravel_multi_index(tuple(cells.T), grid.cells)
    occupied, inverse = np.unique(flat, return_inverse=True)

    total_length = np.bincount(inverse, weights=lengths, minlength=len(occupied))
    scatter = np.zeros((len(occupied), 3, 3))
    for i in range(3):
        for j in range(i, 3):
            acc = np.bincount(inverse, weights=lengths * dirs[:, i] * dirs[:, j], minlength=len(occupied))
            scatter[:, i, j] = acc
            scatter[:, j, i] = acc

    keep = total_length >= min_length
    indices = np.stack(np.unravel_index(occupied[keep], grid.cells), axis=1)
    directions = principal_axes(scatter[keep]) if np.any(keep) else np.zeros((0, 3))
    logger.info(f"局部方向场: {int(keep.sum())} 个被占据单元 / 共 {int(np.prod(grid.cells))} 个")
    return DirectionField(grid=grid, indices=indices, directions=directions)


def voxelize(fibres: Sequence[Fibre], dims: Tuple[int, int, int]) -> np.ndarray:
    """体素化：体素中心到某条中心线的距离 <= 半径即置1"""
    dims = tuple(int(d) for d in dims)
    if min(dims) < 1:
        raise InvalidArgumentError(f"体素尺寸必须为正: {dims}")
    volume = np.zeros(dims, dtype=np.uint8)
    upper = np.array(dims)
    for fibre in fibres:
        r = fibre.radius
        lo = np.maximum(np.floor(np.minimum(fibre.p0, fibre.p1) - r).astype(int), 0)
        hi = np.minimum(np.ceil(np.maximum(fibre.p0, fibre.p1) + r).astype(int) + 1, upper)
        if np.any(hi <= lo):
            continue
        axes = [np.arange(lo[j], hi[j]) + 0.5 for j in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        seg = fibre.p1 - fibre.p0
        t = np.clip((pts - fibre.p0) @ seg / (seg @ seg), 0.0, 1.0)
        dist = np.linalg.norm(pts - (fibre.p0 + t[:, None] * seg), axis=1)
        inside = (dist <= r).reshape(gx.shape)
        sub = volume[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        sub[inside] = 1
    return volume


def generate_block_gaussian_field(dims: Tuple[int, int, int], m: int, rng: np.random.Generator) -> ScalarField3:
    """m×m×m 分块常值的标准正态场，不同块相互独立（块从索引0、m、2m… 开始）"""
    if m < 1:
        raise InvalidArgumentError(f"块大小 m 必须 >= 1: {m}")
    dims = tuple(int(d) for d in dims)
    blocks = tuple(-(-d // m) for d in dims)
    values = rng.standard_normal(blocks)
    for axis in range(3):
        values = np.repeat(values, m, axis=axis)
    values = values[:dims[0], :dims[1], :dims[2]]
    return ScalarField3(values=values, name=f"block_gaussian_m{m}")


def inject_anomaly(field_: ScalarField3, box: BoxParam, h: float) -> ScalarField3:
    """在盒子 I_θ 的被占据索引上加常数 h"""
    if not box.fits(field_.dims):
        raise InvalidArgumentError(f"盒子超出场范围: {box.origin}+{box.extent} / {field_.dims}")
    shifted = field_.copy()
    sl = box.slices()
    shifted.values[sl] += h * shifted.mask[sl]
    return shifted


def _layers_from_spec(
    spec: Sequence[Tuple[Union[str, Axis], float]],
    dims: Tuple[int, int, int],
    slab_axis: Axis,
    fibre_volume: float,
    volume_fraction: float,
) -> List[LayerSpec]:
    extent = dims[slab_axis.value]
    cross_section = np.prod(dims) / extent
    edges = np.linspace(0, extent, len(spec) + 1).round().astype(int)
    layers = []
    for (axis, beta), lower, upper in zip(spec, edges[:-1], edges[1:]):
        count = int(round(volume_fraction * cross_section * (upper - lower) / fibre_volume))
        layers.append(LayerSpec(lower=int(lower), upper=int(upper),
                                acg=AcgParams(preferred_axis=Axis.parse(axis).unit(), beta=beta),
                                count=count))
    return layers


def layered_rsa_config(
    dims: Tuple[int, int, int] = (480, 480, 480),
    fibre_length: float = 32.0,
    radius: float = 4.0 / 3.0,
    volume_fraction: float = 0.2,
    layers: Sequence[Tuple[Union[str, Axis], float]] = (("x", 0.1), ("y", 0.5), ("x", 0.1)),
    slab_axis: Axis = Axis.Z,
    seed: Optional[int] = None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> RsaConfig:
    """分层样本预设：沿 z 叠放的等厚层，每层纤维数由目标体积分数推出"""
    base = RsaConfig(dims=dims, fibre_length=fibre_length, radius=radius, slab_axis=slab_axis)
    spec = _layers_from_spec(layers, base.dims, base.slab_axis, base.fibre_volume, volume_fraction)
    return RsaConfig(dims=dims, layers=spec, fibre_length=fibre_length, radius=radius,
                     slab_axis=slab_axis, max_attempts=max_attempts, seed=seed)


def homogeneous_rsa_config(
    dims: Tuple[int, int, int] = (480, 480, 480),
    fibre_length: float = 32.0,
    radius: float = 4.0 / 3.0,
    volume_fraction: float = 0.2,
    axis: Union[str, Axis] = "x",
    beta: float = 0.1,
    seed: Optional[int] = None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> RsaConfig:
    """均匀样本预设：单层、单一方向分布"""
    return layered_rsa_config(dims=dims, fibre_length=fibre_length, radius=radius,
                              volume_fraction=volume_fraction, layers=((axis, beta),),
                              seed=seed, max_attempts=max_attempts)


def layer_of_window(config: RsaConfig, grid: GridSpec, window_indices: np.ndarray) -> np.ndarray:
    """窗口中心所在的层（真实标签），用于评估定位误差"""
    window_indices = np.asarray(window_indices, dtype=np.int64).reshape(-1, 3)
    centre = (window_indices[:, config.slab_axis.value] + 0.5) * grid.window_edge
    return config.layer_of(centre)


def misaligned_boundaries(config: RsaConfig, window_edge: int) -> List[float]:
    """不落在窗口边界上的层界面（沿层叠轴的坐标）

    层界面穿过窗口时，该窗口混有两层的纤维，真实标签只按窗口中心计。
    """
    if window_edge <= 0:
        raise InvalidArgumentError(f"窗口边长必须为正: {window_edge}")
    inner = sorted(layer.upper for layer in config.layers)[:-1]
    return [float(b) for b in inner if b % window_edge != 0]
