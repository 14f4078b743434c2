#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
变点检验临界值校准工具

在分块高斯场的标准网格（默认 80³、Δ₀ = Δ₁ = 8、γ₀ = 0.05、γ₁ = 0.5）上：
1. 按目标 |Θ₀| 校准最小盒子边长 L_M
2. 计算 σ² × m 的临界值表并导出 CSV
3. 用蒙特卡洛求 T_W 的经验临界值
4. 检验族尾概率界是否被经验超越频率违反
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# 添加项目路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.changepoint import ExceedanceCheck, ThetaGrid, ThetaSet, calibrate_min_extent, critical_value_table, \
    empirical_critical_value, enumerate_theta, group_sizes, tail_bound_exceedance
from src.config import configure_logging

logger = logging.getLogger(__name__)

DEFAULT_M_VALUES = (10, 9, 8, 7, 6, 5, 4, 3, 2)
DEFAULT_SIGMA2_VALUES = (1.0, 4.0, 8.0)
REFERENCE_THETA_COUNT = 11954

# 80³ 标准网格、α = 0.05、M₀ = σ 下的参考临界值（σ² -> m -> y_α）
REFERENCE_CRITICAL_VALUES = {
    1.0: {10: 1.0757, 9: 1.0492, 8: 0.8793, 7: 0.7198, 6: 0.5711, 5: 0.4345, 4: 0.3109, 3: 0.2019, 2: 0.1099},
    4.0: {10: 2.1513, 9: 2.0985, 8: 1.7587, 7: 1.4394, 6: 1.1423, 5: 0.8690, 4: 0.6218, 3: 0.4039, 2: 0.2198},
    8.0: {10: 3.0424, 9: 2.9677, 8: 2.4871, 7: 2.0357, 6: 1.6154, 5: 1.2289, 4: 0.8793, 3: 0.5711, 2: 0.3109},
}


class CriticalValueCalibrator:
    """临界值校准器"""

    def __init__(self, dims: Tuple[int, int, int] = (80, 80, 80), offset_step: int = 8, extent_step: int = 8,
                 min_extent: Optional[int] = None, gamma0: float = 0.05, gamma1: float = 0.5, alpha: float = 0.05):
        self.dims = tuple(int(d) for d in dims)
        self.alpha = alpha
        self.grid = ThetaGrid(offset_step=offset_step, extent_step=extent_step, min_extent=min_extent or 0,
                              gamma0=gamma0, gamma1=gamma1)
        self.min_extent_fixed = min_extent is not None
        self._theta: Optional[ThetaSet] = None

    def calibrate(self, target_count: int = REFERENCE_THETA_COUNT) -> Dict[str, Any]:
        """选取使 |Θ₀| 最接近目标值的 L_M，并冻结到网格配置中"""
        min_extent, count = calibrate_min_extent(self.dims, None, self.grid, target_count)
        self.grid.min_extent = min_extent
        self.min_extent_fixed = True
        self._theta = None
        logger.info(f"L_M 校准: L_M = {min_extent}, |Θ₀| = {count} (目标 {target_count})")
        return {"min_extent": min_extent, "theta_count": count, "target_count": target_count,
                "exact_match": count == target_count}

    @property
    def theta(self) -> ThetaSet:
        if self._theta is None:
            if not self.min_extent_fixed:
                self.calibrate()
            self._theta = enumerate_theta(self.dims, None, self.grid)
        return self._theta

    def table(self, m_values: Sequence[int] = DEFAULT_M_VALUES,
              sigma2_values: Sequence[float] = DEFAULT_SIGMA2_VALUES, M0: Optional[float] = None) -> pd.DataFrame:
        """临界值表：行为 σ²，列为 m"""
        values = critical_value_table(group_sizes(self.theta), m_values, sigma2_values, self.alpha, M0=M0)
        frame = pd.DataFrame.from_dict(values, orient="index")
        frame.index.name = "sigma2"
        frame.columns.name = "m"
        return frame[[int(m) for m in m_values]]

    @staticmethod
    def scaling_ratios(frame: pd.DataFrame, reference: float = 1.0) -> pd.DataFrame:
        """各 σ² 行与参考行之比除以 √(σ²/σ²_ref)，M₀ = σ 时应全部为 1"""
        base = frame.loc[reference]
        expected = np.sqrt(frame.index.to_numpy(dtype=np.float64) / reference)
        return frame.div(base, axis=1).div(expected, axis=0)

    def empirical_value(self, m: int = 10, reps: int = 300, seed: int = 0) -> Dict[str, Any]:
        """H₀ 下 T_W 的经验 (1-α) 分位数"""
        rng = np.random.default_rng(seed)
        value, stats = empirical_critical_value(self.dims, m, self.grid, reps, self.alpha, rng)
        logger.info(f"经验临界值: m = {m}, {reps} 次重复, ŷ = {value:.4f}")
        return {"m": m, "reps": reps, "empirical_value": value,
                "mean": float(stats.mean()), "std": float(stats.std(ddof=1)) if reps > 1 else 0.0}

    def validate_tail_bound(self, m: int = 5, reps: int = 200, y_grid: Optional[Sequence[float]] = None,
                            seed: int = 0) -> ExceedanceCheck:
        """经验超越频率不超过尾概率界（允许 3 倍标准误）"""
        if y_grid is None:
            y_grid = np.linspace(0.1, 1.0, 10)
        rng = np.random.default_rng(seed)
        check = tail_bound_exceedance(self.dims, m, self.grid, reps, y_grid, rng)
        if check.valid:
            logger.info(f"尾概率界验证通过: m = {m}, {reps} 次重复")
        else:
            logger.warning(f"尾概率界被经验频率超越: m = {m}")
        return check

    @staticmethod
    def compare_with_reference(frame: pd.DataFrame, reference: Optional[Dict[float, Dict[int, float]]] = None
                               ) -> pd.DataFrame:
        """复现值与参考值逐项对照；只列出两边都有的 (σ², m)"""
        reference = REFERENCE_CRITICAL_VALUES if reference is None else reference
        rows = []
        for sigma2 in frame.index:
            for m in frame.columns:
                expected = reference.get(float(sigma2), {}).get(int(m))
                if expected is None:
                    continue
                value = float(frame.loc[sigma2, m])
                rows.append({"sigma2": float(sigma2), "m": int(m), "reference": expected, "reproduced": value,
                             "ratio": value / expected})
        return pd.DataFrame(rows, columns=["sigma2", "m", "reference", "reproduced", "ratio"])

    @staticmethod
    def print_comparison(comparison: pd.DataFrame):
        if comparison.empty:
            print("⚠️ 没有可对照的参考临界值")
            return
        print("\n📐 参考临界值对照（比值 = 复现 / 参考）")
        print(comparison.round(4).to_string(index=False))
        worst = comparison.loc[(comparison["ratio"] - 1.0).abs().idxmax()]
        print(f"最大偏差: σ² = {worst['sigma2']:g}, m = {int(worst['m'])}, 比值 {worst['ratio']:.3f}")

    @staticmethod
    def export_table(frame: pd.DataFrame, output_file: str = "critical_values.csv"):
        """导出临界值表"""
        directory = os.path.dirname(os.path.abspath(output_file))
        os.makedirs(directory, exist_ok=True)
        frame.round(4).to_csv(output_file, encoding="utf-8")
        print(f"✅ 临界值表已导出到 {output_file}")

    def print_table(self, frame: pd.DataFrame):
        print("=" * 60)
        print(f"📊 临界值 y_α (α = {self.alpha}, |Θ₀| = {len(self.theta)}, L_M = {self.grid.min_extent})")
        print("=" * 60)
        print(frame.round(4).to_string())


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数"""
    configure_logging()
    parser = argparse.ArgumentParser(description="变点检验临界值校准")
    parser.add_argument("--dims", type=int, nargs=3, default=[80, 80, 80])
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--target-count", type=int, default=REFERENCE_THETA_COUNT)
    parser.add_argument("--empirical-reps", type=int, default=0, help="经验临界值的重复次数，0 表示跳过")
    parser.add_argument("--validate-reps", type=int, default=0, help="尾概率界验证的重复次数，0 表示跳过")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="临界值表 CSV 路径")
    args = parser.parse_args(argv)

    calibrator = CriticalValueCalibrator(dims=tuple(args.dims), alpha=args.alpha)
    calibrator.calibrate(args.target_count)
    frame = calibrator.table()
    calibrator.print_table(frame)
    calibrator.print_comparison(calibrator.compare_with_reference(frame))
    if args.out:
        calibrator.export_table(frame, args.out)
    if args.empirical_reps > 0:
        result = calibrator.empirical_value(reps=args.empirical_reps, seed=args.seed)
        print(f"\n🎯 经验临界值 ŷ = {result['empirical_value']:.4f} (m = {result['m']})")
    if args.validate_reps > 0:
        check = calibrator.validate_tail_bound(reps=args.validate_reps, seed=args.seed)
        print(f"\n{'✅' if check.valid else '❌'} 尾概率界验证: {'通过' if check.valid else '失败'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
