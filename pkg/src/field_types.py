#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 公共数据类型

网格规格、方向场、标量属性场以及候选异常盒。索引在内部一律从0开始，
只有写出文件时才换算成从1开始的索引。
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-6


@dataclass
class GridSpec:
    """小单元网格与扫描窗口网格

    cell_edge: 小单元边长 Δ（体素）
    cells: 每个方向上的小单元数 (n1, n2, n3)
    window_factor: 每个扫描窗口在每个方向上包含的小单元数 M
    """
    cell_edge: int
    cells: Tuple[int, int, int]
    window_factor: int = 5

    def __post_init__(self):
        self.cells = tuple(int(n) for n in self.cells)
        if len(self.cells) != 3:
            raise InvalidArgumentError(f"网格必须是三维的: {self.cells}")
        if self.cell_edge < 1:
            raise InvalidArgumentError(f"小单元边长必须 >= 1: {self.cell_edge}")
        if self.window_factor < 1:
            raise InvalidArgumentError(f"窗口因子必须 >= 1: {self.window_factor}")
        if min(self.cells) < 1:
            raise InvalidArgumentError(f"小单元数必须为正: {self.cells}")

    @classmethod
    def from_volume(cls, volume_dims: Tuple[int, int, int], cell_edge: int, window_factor: int = 5) -> "GridSpec":
        """由体素尺寸推出小单元网格，末尾不足一个单元的体素被丢弃"""
        cells = tuple(int(d) // int(cell_edge) for d in volume_dims)
        return cls(cell_edge=int(cell_edge), cells=cells, window_factor=int(window_factor))

    @property
    def window_dims(self) -> Tuple[int, int, int]:
        return tuple(n // self.window_factor for n in self.cells)

    @property
    def n_windows(self) -> int:
        return int(np.prod(self.window_dims))

    @property
    def window_edge(self) -> int:
        """扫描窗口边长（体素），即 MΔ"""
        return self.window_factor * self.cell_edge

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cell_edge": self.cell_edge,
            "cells": list(self.cells),
            "window_factor": self.window_factor,
        }


@dataclass
class DirectionField:
    """稀疏的小单元方向场：只保存被占据单元的平均局部方向"""
    grid: GridSpec
    indices: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        if len(self.indices) != len(self.directions):
            raise InvalidArgumentError("索引与方向数量不一致")
        if len(self.indices):
            if self.indices.min() < 0 or np.any(self.indices >= np.array(self.grid.cells)):
                raise InvalidArgumentError("方向场索引超出网格范围")
            norms = np.linalg.norm(self.directions, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
                raise InvalidArgumentError("方向场包含非单位向量")

    def __len__(self) -> int:
        return len(self.indices)

    @classmethod
    def empty(cls, grid: GridSpec) -> "DirectionField":
        return cls(grid=grid, indices=np.zeros((0, 3), dtype=np.int64), directions=np.zeros((0, 3)))

    def mask(self) -> np.ndarray:
        """被占据单元集合 J 的布尔掩码"""
        occupied = np.zeros(self.grid.cells, dtype=bool)
        if len(self):
            occupied[tuple(self.indices.T)] = True
        return occupied

    def subset(self, rows: np.ndarray) -> "DirectionField":
        return DirectionField(grid=self.grid, indices=self.indices[rows], directions=self.directions[rows])


@dataclass
class ScalarField3:
    """带占据掩码的三维标量场，掩码外的值固定为0"""
    values: np.ndarray
    mask: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise InvalidArgumentError(f"标量场必须是三维数组: ndim={self.values.ndim}")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise InvalidArgumentError("掩码形状与数值形状不一致")
        self.values[~self.mask] = 0.0

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.values.shape)

    @property
    def n_occupied(self) -> int:
        return int(self.mask.sum())

    def occupied_values(self) -> np.ndarray:
        return self.values[self.mask]

    def sample_variance(self) -> float:
        """掩码内的样本方差（分母 n-1）"""
        vals = self.occupied_values()
        if len(vals) < 2:
            return 0.0
        return float(np.var(vals, ddof=1))

    def copy(self) -> "ScalarField3":
        return ScalarField3(values=self.values.copy(), mask=self.mask.copy(), name=self.name)


@dataclass
class BoxParam:
    """候选异常区域 I_θ：以0为起点的原点与边长（单位为网格索引）"""
    origin: Tuple[int, int, int]
    extent: Tuple[int, int, int]
    n_inside: int = 0
    n_outside: int = 0

    def __post_init__(self):
        self.origin = tuple(int(v) for v in self.origin)
        self.extent = tuple(int(v) for v in self.extent)
        if min(self.extent) < 1:
            raise InvalidArgumentError(f"盒子边长必须为正: {self.extent}")

    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    def fits(self, dims: Tuple[int, int, int]) -> bool:
        return all(o >= 0 and o + e <= d for o, e, d in zip(self.origin, self.extent, dims))

    @property
    def volume(self) -> int:
        return int(np.prod(self.extent))

    def to_dict(self) -> Dict[str, Any]:
        """输出时原点换算为从1开始的索引"""
        return {
            "origin": [o + 1 for o in self.origin],
            "extent": list(self.extent),
            "n_inside": int(self.n_inside),
            "n_outside": int(self.n_outside),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoxParam":
        return cls(
            origin=tuple(o - 1 for o in data["origin"]),
            extent=tuple(data["extent"]),
            n_inside=data.get("n_inside", 0),
            n_outside=data.get("n_outside", 0),
        )
