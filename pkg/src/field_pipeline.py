#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 网格与属性场

把小单元方向场划分到 M×M×M 的扫描窗口，计算窗口平均局部方向（MLD）、
窗口熵估计，以及按坐标取绝对值的折叠属性场。
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .entropy import NnConfig, PluginConfig, nn_entropy_penalized, plugin_entropy
from .exceptions import DegenerateSampleError, InvalidArgumentError, ZeroDistanceError
from .field_types import DirectionField, GridSpec, ScalarField3

logger = logging.getLogger(__name__)

MIN_ENTROPY_MEMBERS = 8
ATTRIBUTE_SELECTIONS = ("entropy", "mld", "combined")


@dataclass
class WindowAggregate:
    """一个扫描窗口的汇总"""
    index: Tuple[int, int, int]
    count: int
    mld: np.ndarray
    entropy: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "index": [int(i) + 1 for i in self.index],
            "count": int(self.count),
            "mld": [float(v) for v in self.mld],
            "entropy": None if self.entropy is None else float(self.entropy),
        }


def partition_windows(grid: GridSpec, field: DirectionField) -> Dict[Tuple[int, int, int], np.ndarray]:
    """窗口 l -> 成员单元在方向场中的行号 S_l

    超出 M·m_i 的尾部单元被丢弃。
    """
    if grid.window_factor > min(grid.cells):
        raise InvalidArgumentError(f"窗口因子 M={grid.window_factor} 大于最小单元数 {min(grid.cells)}")
    if len(field) == 0:
        return {}
    windows = field.indices // grid.window_factor
    inside = np.all(windows < np.array(grid.window_dims), axis=1)
    rows = np.nonzero(inside)[0]
    if len(rows) == 0:
        return {}
    flat = np.ravel_multi_index(tuple(windows[rows].T), grid.window_dims)
    order = np.argsort(flat, kind="stable")
    flat_sorted = flat[order]
    starts = np.flatnonzero(np.r_[True, flat_sorted[1:] != flat_sorted[:-1]])
    result = {}
    for begin, end in zip(starts, np.r_[starts[1:], len(flat_sorted)]):
        key = tuple(int(v) for v in np.unravel_index(flat_sorted[begin], grid.window_dims))
        result[key] = rows[order[begin:end]]
    dropped = len(field) - len(rows)
    if dropped:
        logger.debug(f"丢弃尾部单元 {dropped} 个")
    return result


def fold_attributes(field: DirectionField) -> Tuple[ScalarField3, ScalarField3, ScalarField3]:
    """x̃ = |x|, ỹ = |y|, z̃ = |z|，定义在小单元网格上，掩码继承自方向场"""
    mask = field.mask()
    result = []
    for col, name in enumerate(("x", "y", "z")):
        values = np.zeros(field.grid.cells)
        if len(field):
            values[tuple(field.indices.T)] = np.abs(field.directions[:, col])
        result.append(ScalarField3(values=values, mask=mask, name=f"{name}_folded"))
    return tuple(result)


def compute_mld(field: DirectionField, windows: Dict[Tuple[int, int, int], np.ndarray]) -> List[WindowAggregate]:
    """窗口内折叠坐标的均值；空窗口不输出"""
    folded = np.abs(field.directions)
    aggregates = []
    for key in sorted(windows):
        rows = windows[key]
        if len(rows) == 0:
            continue
        aggregates.append(WindowAggregate(index=key, count=len(rows), mld=folded[rows].mean(axis=0)))
    return aggregates


def mld_fields(aggregates: Sequence[WindowAggregate], grid: GridSpec) -> Tuple[ScalarField3, ScalarField3, ScalarField3]:
    """把 MLD 三个坐标排成窗口网格上的标量场"""
    dims = grid.window_dims
    values = np.zeros((3,) + tuple(dims))
    mask = np.zeros(dims, dtype=bool)
    for agg in aggregates:
        values[(slice(None),) + agg.index] = agg.mld
        mask[agg.index] = True
    return tuple(ScalarField3(values=values[k], mask=mask, name=f"mld_{name}")
                 for k, name in enumerate(("x", "y", "z")))


def entropy_field(
    field: DirectionField,
    windows: Dict[Tuple[int, int, int], np.ndarray],
    cfg: Optional[Union[NnConfig, PluginConfig]] = None,
    min_members: int = MIN_ENTROPY_MEMBERS,
) -> ScalarField3:
    """窗口网格上的熵估计场（默认带惩罚最近邻估计，也可用插值估计）

    方向按方向场中保存的形式使用（局部方向场已折叠到 z >= 0）；
    有效成员不足 min_members 或估计值非有限的窗口从掩码中剔除。
    """
    cfg = cfg or NnConfig()
    dims = field.grid.window_dims
    values = np.zeros(dims)
    mask = np.zeros(dims, dtype=bool)
    excluded = 0
    for key in sorted(windows):
        rows = windows[key]
        if len(rows) < 2:
            excluded += 1
            continue
        try:
            if isinstance(cfg, PluginConfig):
                estimate = plugin_entropy(field, rows, cfg)
            else:
                estimate = nn_entropy_penalized(field.directions[rows], cfg)
        except (DegenerateSampleError, ZeroDistanceError) as e:
            logger.debug(f"窗口 {key} 熵估计失败: {e}")
            excluded += 1
            continue
        if estimate.n_used < min_members or not np.isfinite(estimate.value):
            excluded += 1
            continue
        values[key] = estimate.value
        mask[key] = True
    if excluded:
        logger.info(f"熵场: 剔除 {excluded} 个窗口")
    return ScalarField3(values=values, mask=mask, name="entropy")


def window_coordinates(grid: GridSpec, indices: np.ndarray) -> np.ndarray:
    """窗口坐标 v_l = (l-1)·MΔ（这里 l 从0开始，所以是 l·MΔ）"""
    return np.asarray(indices, dtype=np.float64).reshape(-1, 3) * grid.window_edge


def attribute_matrix(
    entropy: Optional[ScalarField3],
    mld: Optional[Sequence[ScalarField3]],
    selection: str = "combined",
) -> Tuple[np.ndarray, np.ndarray]:
    """按选择组装窗口属性矩阵并逐列标准化

    返回 (窗口索引 (n,3), 标准化属性 (n,k))；只保留所选属性全部有定义的窗口。
    """
    if selection not in ATTRIBUTE_SELECTIONS:
        raise InvalidArgumentError(f"未知的属性选择: {selection}")
    fields: List[ScalarField3] = []
    if selection in ("entropy", "combined"):
        if entropy is None:
            raise InvalidArgumentError("缺少熵场")
        fields.append(entropy)
    if selection in ("mld", "combined"):
        if mld is None:
            raise InvalidArgumentError("缺少 MLD 场")
        fields.extend(mld)
    mask = np.logical_and.reduce([f.mask for f in fields])
    indices = np.argwhere(mask)
    data = np.stack([f.values[mask] for f in fields], axis=1)
    std = data.std(axis=0)
    std[std == 0] = 1.0
    return indices, (data - data.mean(axis=0)) / std
