#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
运行结果管理工具

扫描输出目录下的 report.json，汇总各次运行的判决、检验统计量与聚类结果，
并导出每个属性一行的汇总 CSV
"""

import json
import logging
import os
import sys
from collections import Counter
from typing import Any, Dict, List, Optional

import pandas as pd

# 添加项目路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.config import configure_logging

logger = logging.getLogger(__name__)

REPORT_FILENAME = "report.json"


class RunDataManager:
    """运行结果管理器"""

    def __init__(self, runs_dir: str = "runs"):
        self.runs_dir = runs_dir
        self.reports: List[Dict[str, Any]] = []
        self.load_reports()

    def load_reports(self):
        """递归加载所有运行报告"""
        self.reports = []

        if not os.path.exists(self.runs_dir):
            print(f"目录 {self.runs_dir} 不存在")
            return

        for root, _, files in sorted(os.walk(self.runs_dir)):
            if REPORT_FILENAME not in files:
                continue
            filepath = os.path.join(root, REPORT_FILENAME)
            try:
                with open(filepath, 'r', encoding='utf-8') as f:
                    data = json.load(f)
                data["_run"] = os.path.relpath(root, self.runs_dir)
                self.reports.append(data)
            except Exception as e:
                logger.warning(f"加载 {filepath} 失败: {e}")
                print(f"加载 {filepath} 失败: {e}")

        print(f"✅ 成功加载 {len(self.reports)} 份运行报告")

    def get_statistics(self) -> Dict[str, Any]:
        """获取汇总统计"""
        if not self.reports:
            return {}

        rejections = Counter()
        tested = 0
        for report in self.reports:
            tests = report.get("tests")
            if not tests:
                continue
            tested += 1
            for row in tests.get("results", []):
                if row.get("decision") == "reject":
                    rejections[row["attribute"]] += 1

        clustered = [r["clustering"] for r in self.reports if r.get("clustering")]
        errors = [c["misclassification"] for c in clustered if c.get("misclassification") is not None]
        return {
            'total_runs': len(self.reports),
            'tested_runs': tested,
            'verdicts': Counter(r.get("verdict", "accept") for r in self.reports if r.get("tests")),
            'rejections': rejections,
            'clustered_runs': len(clustered),
            'beta_hat': [c["beta_hat"] for c in clustered],
            'misclassification': errors,
        }

    def print_statistics(self):
        """打印统计信息"""
        stats = self.get_statistics()
        if not stats:
            print("❌ 无数据可统计")
            return

        print("=" * 60)
        print("📊 运行结果统计")
        print("=" * 60)

        print(f"运行总数: {stats['total_runs']}")

        if stats['tested_runs']:
            print(f"\n🔍 检验判决 ({stats['tested_runs']} 次):")
            for verdict, count in stats['verdicts'].items():
                print(f"  - {verdict}: {count}次 ({count / stats['tested_runs'] * 100:.1f}%)")
            print(f"\n📐 各属性拒绝次数:")
            for attribute, count in stats['rejections'].most_common():
                print(f"  - {attribute}: {count}次")

        if stats['clustered_runs']:
            betas = stats['beta_hat']
            print(f"\n🧩 聚类 ({stats['clustered_runs']} 次):")
            print(f"  - β̂ 范围: {min(betas):.3f}-{max(betas):.3f}")
            if stats['misclassification']:
                avg = sum(stats['misclassification']) / len(stats['misclassification'])
                print(f"  - 平均平衡误分率: {avg:.3f}")

    def summary_frame(self) -> pd.DataFrame:
        """每次运行每个属性一行"""
        rows = []
        for report in self.reports:
            tests = report.get("tests") or {}
            clustering = report.get("clustering") or {}
            for row in tests.get("results", []):
                rows.append({
                    'run': report["_run"],
                    'seed': report.get("config", {}).get("seed"),
                    'attribute': row["attribute"],
                    'sample_variance': row["sample_variance"],
                    'statistic': row["statistic"],
                    'y_alpha': row["y_alpha"],
                    'p_bound': row["p_bound"],
                    'log10_p_bound': row.get("log10_p_bound"),
                    'decision': row["decision"],
                    'verdict': tests.get("verdict"),
                    'beta_hat': clustering.get("beta_hat"),
                })
        return pd.DataFrame(rows, columns=['run', 'seed', 'attribute', 'sample_variance', 'statistic', 'y_alpha',
                                           'p_bound', 'log10_p_bound', 'decision', 'verdict', 'beta_hat'])

    def export_to_csv(self, output_file: str = "run_summary.csv"):
        """导出汇总 CSV"""
        frame = self.summary_frame()
        if frame.empty:
            print("❌ 无数据可导出")
            return
        frame.to_csv(output_file, index=False, encoding='utf-8')
        print(f"✅ 数据已导出到 {output_file}")

    def get_report(self, run: str) -> Optional[Dict[str, Any]]:
        for report in self.reports:
            if report["_run"] == run:
                return report
        return None


def main():
    """主函数"""
    configure_logging()
    runs_dir = sys.argv[1] if len(sys.argv) > 1 else "runs"
    manager = RunDataManager(runs_dir)
    manager.print_statistics()
    if len(sys.argv) > 2:
        manager.export_to_csv(sys.argv[2])


if __name__ == "__main__":
    main()
