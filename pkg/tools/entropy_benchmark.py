#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
方向熵估计量基准测试

对球面均匀分布（真值 ln 4π）重复抽样：
- 最近邻估计量：不同样本量下的均值、方差、偏差与 MSE
- 核密度插值估计量：在一个样本量上校准带宽后，固定带宽跑其余样本量
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

# 添加项目路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import configure_logging
from src.entropy import LOG_4PI, PluginConfig, nn_entropy, plugin_entropy_samples
from src.sphere_core import sample_uniform_sphere

logger = logging.getLogger(__name__)

NN_SIZES = (125, 64)
PLUGIN_SIZES = (62500, 125000, 250000, 500000)
PLUGIN_REFERENCE = {62500: 2.099, 125000: 2.309, 250000: 2.418}
BANDWIDTH_CANDIDATES = (0.02, 0.03, 0.05, 0.08, 0.12, 0.18, 0.25)


def _summary(estimates: np.ndarray, size: int, estimator: str, **extra) -> Dict:
    bias = float(estimates.mean() - LOG_4PI)
    variance = float(estimates.var(ddof=1)) if len(estimates) > 1 else 0.0
    row = {
        "estimator": estimator,
        "size": int(size),
        "reps": int(len(estimates)),
        "mean": float(estimates.mean()),
        "variance": variance,
        "bias": bias,
        "mse": float(np.mean((estimates - LOG_4PI) ** 2)),
    }
    row.update(extra)
    return row


class EntropyBenchmark:
    """熵估计量基准"""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.bandwidth: Optional[float] = None
        self.results: List[Dict] = []

    def _rng(self, size: int) -> np.random.Generator:
        # 每个样本量独立的随机流，结果不依赖运行顺序
        return np.random.default_rng([self.seed, int(size)])

    def nn_experiment(self, sizes: Sequence[int] = NN_SIZES, reps: int = 100) -> pd.DataFrame:
        """最近邻估计量的重复实验"""
        rows = []
        for size in sizes:
            rng = self._rng(size)
            estimates = np.array([nn_entropy(sample_uniform_sphere(rng, size)) for _ in range(reps)])
            rows.append(_summary(estimates, size, "nearest_neighbour"))
            logger.info(f"最近邻: N = {size}, 均值 {rows[-1]['mean']:.4f}, 方差 {rows[-1]['variance']:.4f}")
        self.results.extend(rows)
        return pd.DataFrame(rows)

    def _plugin_estimates(self, size: int, reps: int, bandwidth: float) -> np.ndarray:
        rng = self._rng(size)
        cfg = PluginConfig(bandwidth=bandwidth)
        return np.array([plugin_entropy_samples(sample_uniform_sphere(rng, size), cfg).value for _ in range(reps)])

    def calibrate_bandwidth(self, size: int = 62500, target: Optional[float] = None, reps: int = 3,
                            candidates: Sequence[float] = BANDWIDTH_CANDIDATES) -> float:
        """在单个样本量上选取均值最接近目标值的带宽"""
        target = PLUGIN_REFERENCE.get(size, LOG_4PI) if target is None else target
        best_h, best_gap = None, np.inf
        for h in candidates:
            gap = abs(float(self._plugin_estimates(size, reps, h).mean()) - target)
            logger.debug(f"带宽 {h}: |均值 - 目标| = {gap:.4f}")
            if gap < best_gap:
                best_h, best_gap = h, gap
        self.bandwidth = float(best_h)
        logger.info(f"带宽校准: N = {size}, 目标 {target}, h = {self.bandwidth} (偏差 {best_gap:.4f})")
        return self.bandwidth

    def plugin_experiment(self, sizes: Sequence[int] = PLUGIN_SIZES, reps: int = 10,
                          bandwidth: Optional[float] = None) -> pd.DataFrame:
        """核密度插值估计量的重复实验，带宽在各样本量间保持不变"""
        bandwidth = bandwidth or self.bandwidth or PluginConfig().bandwidth
        rows = []
        for size in sizes:
            estimates = self._plugin_estimates(size, reps, bandwidth)
            rows.append(_summary(estimates, size, "plugin", bandwidth=bandwidth,
                                 reference=PLUGIN_REFERENCE.get(size)))
            logger.info(f"插值估计: N = {size}, 均值 {rows[-1]['mean']:.4f}, MSE {rows[-1]['mse']:.2e}")
        self.results.extend(rows)
        return pd.DataFrame(rows)

    def print_results(self):
        if not self.results:
            print("❌ 无结果可显示")
            return
        print("=" * 60)
        print(f"📊 熵估计量基准 (真值 ln 4π = {LOG_4PI:.4f})")
        print("=" * 60)
        frame = pd.DataFrame(self.results)
        print(frame.to_string(index=False, float_format=lambda v: f"{v:.4g}"))

    def export_to_csv(self, output_file: str = "entropy_benchmark.csv"):
        if not self.results:
            print("❌ 无结果可导出")
            return
        pd.DataFrame(self.results).to_csv(output_file, index=False, encoding="utf-8")
        print(f"✅ 基准结果已导出到 {output_file}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数"""
    configure_logging()
    parser = argparse.ArgumentParser(description="方向熵估计量基准测试")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--nn-reps", type=int, default=100)
    parser.add_argument("--plugin-reps", type=int, default=0, help="插值估计的重复次数，0 表示跳过")
    parser.add_argument("--plugin-sizes", type=int, nargs="+", default=list(PLUGIN_SIZES[:3]))
    parser.add_argument("--bandwidth", type=float, default=None, help="固定带宽；缺省时在第一个样本量上校准")
    parser.add_argument("--out", default=None, help="结果 CSV 路径")
    args = parser.parse_args(argv)

    bench = EntropyBenchmark(seed=args.seed)
    bench.nn_experiment(reps=args.nn_reps)
    if args.plugin_reps > 0:
        if args.bandwidth is None:
            bench.calibrate_bandwidth(size=args.plugin_sizes[0])
        bench.plugin_experiment(sizes=args.plugin_sizes, reps=args.plugin_reps, bandwidth=args.bandwidth)
    bench.print_results()
    if args.out:
        bench.export_to_csv(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
