#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
测试变点检验：Θ₀ 枚举、扫描统计量、尾概率界、临界值、m 估计与四属性联合检验
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from src.changepoint import (
    AttributeTestSettings, BoxSums, SuiteResult, TailBoundParams, TestResult, ThetaGrid, admissible_m_bound,
    build_prefix_sums, calibrate_min_extent, covariance_profile, critical_value, critical_value_table, empirical_critical_value,
    enumerate_theta, estimate_m, eta_tail_bound, evaluate_attribute, family_tail_bound, group_sizes,
    log10_p_value_bound, log_family_tail_bound, p_value_bound, run_attribute_suite, scan_statistic, simplified_tail_bound,
    suite_parameters, tail_bound_exceedance, z_statistic, z_statistics,
)
from src.exceptions import DegenerateFieldError, InvalidArgumentError, UndefinedStatisticError
from src.fibre_sim import generate_block_gaussian_field, inject_anomaly
from src.field_types import BoxParam, ScalarField3

SMALL_GRID = ThetaGrid(offset_step=4, extent_step=4, min_extent=4, gamma0=0.05, gamma1=0.5)


@pytest.fixture(scope="module")
def reference_theta():
    """80³ 网格、Δ₀ = Δ₁ = 8，L_M 按 |Θ₀| = 11954 校准"""
    grid = ThetaGrid(offset_step=8, extent_step=8, min_extent=0, gamma0=0.05, gamma1=0.5)
    min_extent, count = calibrate_min_extent((80, 80, 80), None, grid, 11954)
    grid.min_extent = min_extent
    theta = enumerate_theta((80, 80, 80), None, grid)
    assert len(theta) == count
    return theta


def test_box_sums_match_slicing():
    rng = np.random.default_rng(0)
    values = rng.standard_normal((9, 7, 8))
    mask = rng.random((9, 7, 8)) > 0.3
    field = ScalarField3(values=values, mask=mask)
    sums = BoxSums(field)
    assert sums.total_count == int(mask.sum())
    assert sums.total_sum == pytest.approx(float(values[mask].sum()))
    for origin, extent in (((0, 0, 0), (9, 7, 8)), ((2, 1, 3), (4, 5, 2)), ((8, 6, 7), (1, 1, 1))):
        box = BoxParam(origin, extent)
        assert sums.box_sum(origin, extent) == pytest.approx(float(field.values[box.slices()].sum()))
        assert sums.box_count(origin, extent) == int(mask[box.slices()].sum())


def test_build_prefix_sums_matches_naive_scan():
    """前缀和的盒子求和与逐元素求和一致（随机 12³ 场、随机盒子）"""
    rng = np.random.default_rng(12)
    for _ in range(20):
        values = rng.standard_normal((12, 12, 12))
        mask = rng.random((12, 12, 12)) > 0.2
        sums = build_prefix_sums(ScalarField3(values=values, mask=mask))
        origin = rng.integers(0, 11, size=3)
        extent = np.array([rng.integers(1, 13 - o) for o in origin])
        box = BoxParam(tuple(int(v) for v in origin), tuple(int(v) for v in extent))
        expected = float(np.where(mask, values, 0.0)[box.slices()].sum())
        assert sums.box_sum(origin, extent) == pytest.approx(expected, abs=1e-10)


def test_enumerate_theta_constraints():
    dims = (24, 24, 24)
    theta = enumerate_theta(dims, None, SMALL_GRID)
    assert len(theta) > 0
    volume = float(np.prod(dims))
    assert np.all(theta.origins % 4 == 0)
    assert np.all(theta.extents % 4 == 0)
    assert np.all(theta.extents >= 4)
    assert np.all(theta.origins + theta.extents <= np.array(dims))
    assert np.all(theta.n_inside >= 0.05 * volume)
    assert np.all(theta.n_inside <= 0.5 * volume)
    np.testing.assert_array_equal(theta.n_inside, np.prod(theta.extents, axis=1))
    np.testing.assert_array_equal(theta.n_outside, theta.n_total - theta.n_inside)

    keys = [tuple(o) + tuple(e) for o, e in zip(theta.origins, theta.extents)]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)

    box = theta[0]
    assert isinstance(box, BoxParam)
    assert box.n_inside + box.n_outside == theta.n_total
    assert theta.sizes().shape == (len(theta), 2)


def test_enumerate_theta_counts_occupied_cells():
    rng = np.random.default_rng(1)
    mask = rng.random((16, 16, 16)) > 0.5
    theta = enumerate_theta((16, 16, 16), mask, SMALL_GRID)
    assert theta.n_total == int(mask.sum())
    for box in list(theta)[:20]:
        assert box.n_inside == int(mask[box.slices()].sum())
        assert 0.05 * 16 ** 3 <= box.n_inside <= 0.5 * 16 ** 3


def test_enumerate_theta_empty():
    """最小边长大于网格时 Θ₀ 为空，扫描统计量无法计算"""
    theta = enumerate_theta((10, 10, 10), None, ThetaGrid(offset_step=8, extent_step=8, min_extent=22))
    assert len(theta) == 0
    sums = BoxSums(ScalarField3(values=np.zeros((10, 10, 10))))
    with pytest.raises(InvalidArgumentError):
        scan_statistic(sums, theta)


def test_theta_grid_validation():
    with pytest.raises(InvalidArgumentError):
        ThetaGrid(offset_step=0)
    with pytest.raises(InvalidArgumentError):
        ThetaGrid(min_extent=-1)
    with pytest.raises(InvalidArgumentError):
        ThetaGrid(gamma0=1.5)


def test_calibrate_min_extent_reference(reference_theta):
    """校准得到的 L_M 使 |Θ₀| 在所有可达的计数中最接近 11954"""
    grid = ThetaGrid(offset_step=8, extent_step=8, min_extent=0, gamma0=0.05, gamma1=0.5)
    min_extent, count = calibrate_min_extent((80, 80, 80), None, grid, 11954)
    assert count == len(reference_theta) > 0
    assert np.all(reference_theta.extents.min(axis=1) >= min_extent)
    for other in (min_extent - 8, min_extent + 8):
        if other < 0:
            continue
        grid.min_extent = other
        assert abs(count - 11954) <= abs(len(enumerate_theta((80, 80, 80), None, grid)) - 11954)


def test_z_statistic_recovers_shift():
    """零场上注入均值偏移 h：异常盒的 Z 等于 h，扫描统计量定位到该盒"""
    base = ScalarField3(values=np.zeros((16, 16, 16)))
    anomaly = BoxParam(origin=(4, 4, 8), extent=(8, 8, 4))
    shifted = inject_anomaly(base, anomaly, 1.5)
    sums = BoxSums(shifted)
    assert z_statistic(sums, anomaly) == pytest.approx(1.5)

    theta = enumerate_theta((16, 16, 16), None, SMALL_GRID)
    statistic, box = scan_statistic(sums, theta)
    assert statistic == pytest.approx(1.5)
    assert box.origin == anomaly.origin and box.extent == anomaly.extent


def test_z_statistics_vectorised_matches_scalar():
    field = generate_block_gaussian_field((16, 16, 16), 2, np.random.default_rng(2))
    sums = BoxSums(field)
    theta = enumerate_theta((16, 16, 16), None, SMALL_GRID)
    z = z_statistics(sums, theta)
    for i in range(0, len(theta), max(1, len(theta) // 15)):
        assert z[i] == pytest.approx(z_statistic(sums, theta[i]))


def test_z_statistic_undefined():
    sums = BoxSums(ScalarField3(values=np.ones((4, 4, 4))))
    with pytest.raises(UndefinedStatisticError):
        z_statistic(sums, BoxParam((0, 0, 0), (4, 4, 4)))


def test_eta_tail_bound_regimes():
    """高斯区与指数区的分界为 y = σ²|W|/(M₀|I_θᶜ|)"""
    params = TailBoundParams(m=2, sigma2=1.0)
    n_in, n_out = 100, 900
    n_total = n_in + n_out
    y = 0.5
    expected = 2.0 * np.exp(-y ** 2 * n_out * n_in / (4 * 8 * n_total))
    assert eta_tail_bound(y, n_in, n_out, n_total, params) == pytest.approx(expected)

    y = 2.0
    expected = 2.0 * np.exp(-y * n_in / (2 * 8) + n_total * n_in / (4 * 8 * n_out))
    assert eta_tail_bound(y, n_in, n_out, n_total, params) == pytest.approx(expected)

    with pytest.raises(InvalidArgumentError):
        eta_tail_bound(0.0, n_in, n_out, n_total, params)
    with pytest.raises(InvalidArgumentError):
        eta_tail_bound(1.0, n_out, n_in, n_total, params)


def test_tail_params_default_m0():
    params = TailBoundParams(m=3, sigma2=4.0)
    assert params.M0 == pytest.approx(2.0)
    assert params.H == params.M0
    with pytest.raises(InvalidArgumentError):
        TailBoundParams(m=0)
    with pytest.raises(InvalidArgumentError):
        TailBoundParams(m=1, sigma2=0.0)


def test_group_sizes_swaps_and_counts():
    groups = group_sizes(np.array([[10, 90], [90, 10], [20, 80], [10, 90]]))
    np.testing.assert_array_equal(groups.n_inside, [10, 20])
    np.testing.assert_array_equal(groups.n_outside, [90, 80])
    np.testing.assert_array_equal(groups.multiplicity, [3, 1])
    assert group_sizes(groups) is groups


def test_family_bound_grouped_equals_ungrouped():
    """按尺寸分组求和与逐盒求和一致"""
    theta = enumerate_theta((24, 24, 24), None, SMALL_GRID)
    params = TailBoundParams(m=2, sigma2=1.0)
    for y in (0.2, 0.8, 2.5):
        direct = 0.0
        for n_in, n_out in theta.sizes():
            small, large = sorted((int(n_in), int(n_out)))
            direct += eta_tail_bound(y, small, large, theta.n_total, params)
        assert family_tail_bound(y, theta, params) == pytest.approx(direct, rel=1e-10)


def test_log_family_bound_below_double_precision():
    """对数形式在界值下溢为0时仍然有限，且与直接计算一致"""
    theta = enumerate_theta((24, 24, 24), None, SMALL_GRID)
    params = TailBoundParams(m=1, sigma2=1.0)
    assert log_family_tail_bound(0.8, theta, params) == pytest.approx(np.log(family_tail_bound(0.8, theta, params)))
    far = log_family_tail_bound(200.0, theta, params)
    assert np.isfinite(far)
    assert far < -745.0
    assert family_tail_bound(200.0, theta, params) == 0.0


def test_family_bound_single_box():
    params = TailBoundParams(m=3, sigma2=2.0)
    sizes = np.array([[150, 850]])
    assert family_tail_bound(0.7, sizes, params) == pytest.approx(eta_tail_bound(0.7, 150, 850, 1000, params))


def test_critical_value_meets_alpha():
    theta = enumerate_theta((24, 24, 24), None, SMALL_GRID)
    params = TailBoundParams(m=2, sigma2=1.0)
    y = critical_value(theta, params, 0.05)
    assert family_tail_bound(y, theta, params) <= 0.05
    assert family_tail_bound(y - 1e-4, theta, params) > 0.05
    with pytest.raises(InvalidArgumentError):
        critical_value(theta, params, 0.0)


def test_critical_value_table_sigma_scaling(reference_theta):
    """M₀ = σ 时临界值只依赖 y/σ：σ² = 4 和 8 的行分别是 σ² = 1 行的 2 倍和 √8 倍"""
    table = critical_value_table(reference_theta, [2, 5, 7, 10], [1.0, 4.0, 8.0], 0.05)
    for m in (2, 5, 7, 10):
        assert table[4.0][m] == pytest.approx(2.0 * table[1.0][m], rel=1e-3)
        assert table[8.0][m] == pytest.approx(np.sqrt(8.0) * table[1.0][m], rel=1e-3)


def test_critical_value_m_scaling(reference_theta):
    """全部盒子处于高斯区时 y_α ∝ m^{3/2}；临界值随 m 单调增加"""
    table = critical_value_table(reference_theta, range(2, 11), [1.0], 0.05)[1.0]
    for m in range(3, 7):
        assert table[m] / table[2] == pytest.approx((m / 2.0) ** 1.5, rel=1e-3)
    values = [table[m] for m in range(2, 11)]
    assert all(a < b for a, b in zip(values[:-1], values[1:]))
    assert table[6] < 1.0


def test_direction_critical_value_desk_grid():
    """480³ 桌面样本的方向检验：Δ = 8 的 60³ 单元网格上 y_α 落在 z̃ 与 x̃、ỹ 的层间差之间

    分层样本中 x̃、ỹ 的层间均值差约 0.55，z̃ 约 0.25；Δ = 12 的 40³ 网格上 y_α 超过 0.7，检验没有功效。
    """
    grid = ThetaGrid(offset_step=4, extent_step=4, min_extent=8, gamma0=0.05, gamma1=0.5)
    tail = TailBoundParams(m=5, sigma2=0.2, M0=0.5)
    per_test = 0.05 / 4

    full = enumerate_theta((60, 60, 60), None, grid)
    assert len(full) == 548817
    assert critical_value(full, tail, per_test) == pytest.approx(0.382, abs=0.01)

    mask = np.random.default_rng(5).random((60, 60, 60)) < 0.9
    desk = critical_value(enumerate_theta((60, 60, 60), mask, grid), tail, per_test)
    assert 0.36 < desk < 0.42

    coarse = critical_value(enumerate_theta((40, 40, 40), None, grid), tail, per_test)
    assert coarse > 0.65


def test_p_value_bound():
    theta = enumerate_theta((24, 24, 24), None, SMALL_GRID)
    params = TailBoundParams(m=1, sigma2=1.0)
    assert p_value_bound(0.0, theta, params) == 1.0
    assert p_value_bound(0.01, theta, params) == 1.0
    y = critical_value(theta, params, 0.05)
    assert p_value_bound(y, theta, params) == pytest.approx(0.05, rel=1e-3)
    assert p_value_bound(2 * y, theta, params) < p_value_bound(y, theta, params)
    assert log10_p_value_bound(y, theta, params) == pytest.approx(np.log10(0.05), abs=1e-3)
    with pytest.raises(InvalidArgumentError):
        p_value_bound(-1.0, theta, params)


def test_p_value_bound_direction_parameters():
    """方向场参数（m = 5, σ² = 0.2, M₀ = 0.5）下 T_W = 0.44036 的 p 值上界极小"""
    theta = enumerate_theta((160, 160, 160), None,
                            ThetaGrid(offset_step=32, extent_step=32, min_extent=0, gamma0=0.05, gamma1=0.5))
    params = TailBoundParams(m=5, sigma2=0.2, M0=0.5)
    assert p_value_bound(0.44036, theta, params) <= 1e-20
    assert log10_p_value_bound(0.44036, theta, params) < -20


def test_simplified_bound_dominates_family_bound():
    theta = enumerate_theta((24, 24, 24), None, SMALL_GRID)
    params = TailBoundParams(m=2, sigma2=1.0)
    for y in (0.3, 1.2, 1.6, 3.0):
        simplified = simplified_tail_bound(y, len(theta), theta.n_total, 0.05, 0.5, params)
        assert simplified >= family_tail_bound(y, theta, params) * (1 - 1e-12)
    with pytest.raises(InvalidArgumentError):
        simplified_tail_bound(0.0, len(theta), theta.n_total, 0.05, 0.5, params)


def test_admissible_m_bound():
    value = admissible_m_bound(512000, 11954, 0.05, 0.05)
    expected = (0.05 * 512000 / (4.0 * np.log(2 * 11954 / 0.05))) ** (1.0 / 3.0)
    assert value == pytest.approx(expected)
    with pytest.raises(InvalidArgumentError):
        admissible_m_bound(512000, 11954, 0.05, 1.5)


def test_estimate_m_block_field():
    """块大小为 3 的分块场：滞后 2 仍相关，滞后 3 起独立，估计 m = 3"""
    field = generate_block_gaussian_field((90, 90, 90), 3, np.random.default_rng(3))
    assert estimate_m(field, eps0=0.04, max_lag=5) == 3
    profile = covariance_profile(field, 5)
    assert profile[0] == pytest.approx((2.0 / 3.0) ** 3, abs=0.03)
    assert profile[1] == pytest.approx((2.0 / 3.0) ** 2 / 3.0, abs=0.03)


def test_estimate_m_independent_field():
    field = generate_block_gaussian_field((90, 90, 90), 1, np.random.default_rng(4))
    assert estimate_m(field, max_lag=4) == 1


def test_covariance_profile_errors():
    with pytest.raises(DegenerateFieldError):
        covariance_profile(ScalarField3(values=np.zeros((10, 10, 10))), 2)
    field = generate_block_gaussian_field((10, 10, 10), 1, np.random.default_rng(5))
    with pytest.raises(InvalidArgumentError):
        covariance_profile(field, 10)
    with pytest.raises(InvalidArgumentError):
        covariance_profile(field, 2, mode="spectral")


def test_suite_parameters_presets():
    directions = suite_parameters("directions")
    assert directions.theta.min_extent == 22
    assert directions.tail.m == 5 and directions.tail.M0 == pytest.approx(0.5)
    assert suite_parameters("directions_real").tail.m == 7
    entropy = suite_parameters("entropy")
    assert entropy.tail.M0 == pytest.approx(np.sqrt(0.5))
    with pytest.raises(InvalidArgumentError):
        suite_parameters("volume")


def test_run_attribute_suite_detects_shift():
    """只在 x̃ 场注入偏移：x 被拒绝，其余接受，总体判决为拒绝"""
    rng = np.random.default_rng(6)
    dims = (20, 20, 20)
    fields = [generate_block_gaussian_field(dims, 1, rng) for _ in range(4)]
    fields[0] = inject_anomaly(fields[0], BoxParam(origin=(6, 6, 6), extent=(8, 8, 8)), 2.0)
    grid = ThetaGrid(offset_step=2, extent_step=2, min_extent=4, gamma0=0.05, gamma1=0.5)
    settings = AttributeTestSettings(theta=grid, tail=TailBoundParams(m=1, sigma2=1.0))

    suite = run_attribute_suite(*fields, settings, settings, alpha=0.05)
    assert isinstance(suite, SuiteResult)
    assert [r.attribute for r in suite.results] == ["x", "y", "z", "entropy"]
    assert all(r.alpha == pytest.approx(0.0125) for r in suite.results)
    assert [r.decision for r in suite.results] == ["reject", "accept", "accept", "accept"]
    assert suite.verdict == "reject"
    assert np.all(np.abs(np.array(suite.results[0].argmax_box.origin) - 6) <= 2)
    assert suite.results[0].statistic == pytest.approx(2.0, abs=0.3)
    assert suite.to_dict()["verdict"] == "reject"


def test_evaluate_attribute_round_trip():
    field = generate_block_gaussian_field((16, 16, 16), 1, np.random.default_rng(7))
    settings = AttributeTestSettings(theta=SMALL_GRID, tail=TailBoundParams(m=1, sigma2=1.0))
    result = evaluate_attribute(field, settings, 0.05, "z")
    assert isinstance(result, TestResult)
    assert result.theta_count > 0
    assert result.sample_variance == pytest.approx(field.sample_variance())
    assert result.rejected == (result.statistic >= result.y_alpha)
    restored = TestResult.from_dict(result.to_dict())
    assert restored.argmax_box == result.argmax_box
    assert restored.to_dict() == result.to_dict()


def test_run_attribute_suite_rejects_bad_alpha():
    field = generate_block_gaussian_field((8, 8, 8), 1, np.random.default_rng(8))
    settings = AttributeTestSettings(theta=SMALL_GRID, tail=TailBoundParams(m=1))
    with pytest.raises(InvalidArgumentError):
        run_attribute_suite(field, field, field, field, settings, settings, alpha=1.0)


def test_empirical_critical_value_below_bound():
    """分块高斯场的经验临界值低于由尾概率界求出的临界值"""
    grid = ThetaGrid(offset_step=4, extent_step=4, min_extent=4, gamma0=0.05, gamma1=0.5)
    value, stats = empirical_critical_value((16, 16, 16), 2, grid, 40, 0.05, np.random.default_rng(9))
    assert len(stats) == 40
    assert np.all(stats > 0)
    theta = enumerate_theta((16, 16, 16), None, grid)
    assert value < critical_value(theta, TailBoundParams(m=2, sigma2=1.0), 0.05)


def test_tail_bound_exceedance_valid():
    grid = ThetaGrid(offset_step=4, extent_step=4, min_extent=4, gamma0=0.05, gamma1=0.5)
    check = tail_bound_exceedance((16, 16, 16), 1, grid, 30, [0.05, 0.1, 0.3, 0.6], np.random.default_rng(10))
    assert check.frequency.shape == (4,)
    assert np.all(np.diff(check.frequency) <= 0)
    assert np.all(check.bound <= 1.0)
    assert check.valid


if __name__ == '__main__':
    pytest.main([__file__, "-v"])
