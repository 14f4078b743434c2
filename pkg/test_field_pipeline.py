#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
测试窗口划分、折叠属性场、MLD 与熵场
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from src.entropy import LOG_4PI, NnConfig, PluginConfig
from src.exceptions import InvalidArgumentError
from src.field_pipeline import (
    attribute_matrix, compute_mld, entropy_field, fold_attributes, mld_fields, partition_windows,
    window_coordinates,
)
from src.field_types import DirectionField, GridSpec
from src.sphere_core import sample_uniform_sphere


def _full_field(cells=(10, 10, 10), window_factor=5, seed=0) -> DirectionField:
    grid = GridSpec(cell_edge=4, cells=cells, window_factor=window_factor)
    indices = np.argwhere(np.ones(cells, dtype=bool))
    directions = sample_uniform_sphere(np.random.default_rng(seed), len(indices))
    return DirectionField(grid=grid, indices=indices, directions=directions)


def test_partition_windows_covers_all_cells():
    field = _full_field()
    windows = partition_windows(field.grid, field)
    assert sorted(windows) == [(i, j, k) for i in range(2) for j in range(2) for k in range(2)]
    assert all(len(rows) == 125 for rows in windows.values())
    all_rows = np.sort(np.concatenate(list(windows.values())))
    np.testing.assert_array_equal(all_rows, np.arange(len(field)))
    for key, rows in windows.items():
        np.testing.assert_array_equal(np.unique(field.indices[rows] // 5, axis=0), [key])


def test_partition_windows_drops_tail_cells():
    """第 11 层单元凑不满一个窗口，被丢弃"""
    field = _full_field(cells=(11, 10, 10))
    windows = partition_windows(field.grid, field)
    assert field.grid.window_dims == (2, 2, 2)
    total = sum(len(rows) for rows in windows.values())
    assert total == 1000


def test_partition_windows_rejects_large_factor():
    field = _full_field(cells=(4, 10, 10), window_factor=5)
    with pytest.raises(InvalidArgumentError):
        partition_windows(field.grid, field)


def test_fold_attributes():
    grid = GridSpec(cell_edge=1, cells=(2, 2, 2), window_factor=1)
    field = DirectionField(grid=grid, indices=[[0, 0, 0], [1, 1, 0]],
                           directions=[[-0.6, 0.0, 0.8], [0.0, -1.0, 0.0]])
    x, y, z = fold_attributes(field)
    assert x.name == "x_folded" and z.name == "z_folded"
    assert x.n_occupied == 2
    assert x.values[0, 0, 0] == pytest.approx(0.6)
    assert y.values[1, 1, 0] == pytest.approx(1.0)
    assert z.values[1, 1, 0] == pytest.approx(0.0)
    assert not x.mask[1, 0, 0]


def test_compute_mld_and_fields():
    """MLD 是窗口内折叠坐标的均值，排成窗口网格上的场"""
    field = _full_field(seed=1)
    windows = partition_windows(field.grid, field)
    aggregates = compute_mld(field, windows)
    assert len(aggregates) == 8
    first = aggregates[0]
    assert first.index == (0, 0, 0)
    np.testing.assert_allclose(first.mld, np.abs(field.directions[windows[(0, 0, 0)]]).mean(axis=0))
    assert first.to_dict()["index"] == [1, 1, 1]

    mx, my, mz = mld_fields(aggregates, field.grid)
    assert mx.dims == (2, 2, 2) and mx.name == "mld_x"
    assert mx.n_occupied == 8
    # 均匀方向的折叠坐标均值约为 1/2
    assert np.all(np.abs(mz.values - 0.5) < 0.1)


def test_entropy_field_nn_uniform():
    """均匀方向的窗口熵接近 ln 4π"""
    field = _full_field(seed=2)
    windows = partition_windows(field.grid, field)
    entropy = entropy_field(field, windows, NnConfig(penalty_radius=0.0))
    assert entropy.name == "entropy"
    assert entropy.n_occupied == 8
    assert np.all(np.abs(entropy.occupied_values() - LOG_4PI) < 0.45)
    assert abs(entropy.occupied_values().mean() - LOG_4PI) < 0.2


def test_entropy_field_excludes_sparse_windows():
    """成员不足 min_members 的窗口不进入熵场"""
    field = _full_field(seed=3)
    windows = partition_windows(field.grid, field)
    windows[(1, 1, 1)] = windows[(1, 1, 1)][:5]
    entropy = entropy_field(field, windows, NnConfig(), min_members=8)
    assert entropy.n_occupied == 7
    assert not entropy.mask[1, 1, 1]
    assert entropy.values[1, 1, 1] == 0.0


@pytest.mark.parametrize("penalty", [0.0, 0.01])
def test_entropy_field_excludes_identical_directions(penalty):
    """窗口内方向完全相同时最近邻距离全为 0，窗口被剔除而不是给出 -inf"""
    field = _full_field(seed=6)
    windows = partition_windows(field.grid, field)
    field.directions[windows[(0, 1, 0)]] = [0.0, 0.0, 1.0]
    entropy = entropy_field(field, windows, NnConfig(penalty_radius=penalty))
    assert entropy.n_occupied == 7
    assert not entropy.mask[0, 1, 0]
    assert np.all(np.isfinite(entropy.occupied_values()))


def test_entropy_field_64_member_windows():
    """每窗口 64 个均匀方向：各次重复的估计围绕 ln 4π"""
    estimates = []
    for seed in range(6):
        field = _full_field(cells=(8, 8, 8), window_factor=4, seed=100 + seed)
        windows = partition_windows(field.grid, field)
        assert all(len(rows) == 64 for rows in windows.values())
        estimates.extend(entropy_field(field, windows, NnConfig(penalty_radius=0.0)).occupied_values())
    estimates = np.array(estimates)
    assert len(estimates) == 48
    assert abs(estimates.mean() - LOG_4PI) < 0.1
    assert 0.05 < estimates.std() < 0.35


def test_entropy_field_plugin():
    field = _full_field(seed=4)
    windows = partition_windows(field.grid, field)
    entropy = entropy_field(field, windows, PluginConfig(bandwidth=0.6, neighbourhood=2))
    assert entropy.n_occupied == 8
    assert np.all(np.isfinite(entropy.occupied_values()))


def test_window_coordinates():
    grid = GridSpec(cell_edge=12, cells=(10, 10, 10), window_factor=5)
    coords = window_coordinates(grid, np.array([[0, 0, 0], [1, 0, 1]]))
    np.testing.assert_allclose(coords, [[0, 0, 0], [60, 0, 60]])


def test_attribute_matrix_standardized():
    field = _full_field(seed=5)
    windows = partition_windows(field.grid, field)
    entropy = entropy_field(field, windows)
    mld = mld_fields(compute_mld(field, windows), field.grid)

    indices, data = attribute_matrix(entropy, mld, "combined")
    assert indices.shape == (8, 3) and data.shape == (8, 4)
    np.testing.assert_allclose(data.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(data.std(axis=0), 1.0)

    _, only_entropy = attribute_matrix(entropy, None, "entropy")
    assert only_entropy.shape == (8, 1)
    _, only_mld = attribute_matrix(None, mld, "mld")
    assert only_mld.shape == (8, 3)


def test_attribute_matrix_errors():
    field = _full_field(seed=6)
    windows = partition_windows(field.grid, field)
    mld = mld_fields(compute_mld(field, windows), field.grid)
    with pytest.raises(InvalidArgumentError):
        attribute_matrix(None, mld, "combined")
    with pytest.raises(InvalidArgumentError):
        attribute_matrix(None, mld, "everything")


if __name__ == '__main__':
    pytest.main([__file__, "-v"])
