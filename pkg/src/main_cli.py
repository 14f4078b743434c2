#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测命令行入口

子命令：simulate / fields / test / cluster / pipeline / calibrate
退出码：0 = 未检测到异常，1 = 运行错误，2 = 配置无效，10 = 检测到异常
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from threadpoolctl import threadpool_limits

# 添加项目路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.changepoint import ThetaGrid, calibrate_min_extent, critical_value_table, enumerate_theta
from src.config import configure_logging, load_pipeline_config
from src.exceptions import ConfigError, FibreAnalysisError, InvalidArgumentError
from src.field_io import atomic_write, emit_report
from src.pipeline import FibreAnalysisController

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ANOMALY = 10

STAGES = {
    "simulate": ("simulate",),
    "fields": ("simulate", "fields"),
    "test": ("simulate", "fields", "test"),
    "cluster": ("simulate", "fields", "cluster"),
    "pipeline": ("simulate", "fields", "test", "cluster"),
}


def _status(message: str):
    print(message, file=sys.stderr)


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="纤维方向异常检测")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="随机种子（覆盖配置文件）")
    common.add_argument("--out", default=None, help="输出目录")
    common.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP 线程数上限")
    common.add_argument("--format", choices=("json", "text"), default="text", help="报告格式")

    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "生成 RSA 纤维样本"), ("fields", "计算方向场与属性场"),
                            ("test", "四属性变点检验"), ("cluster", "SAEM 异常定位"),
                            ("pipeline", "完整流水线")):
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        cmd.add_argument("--config", required=True, help="key=value 运行配置文件")

    calib = sub.add_parser("calibrate", parents=[common], help="输出临界值表")
    calib.add_argument("--m", type=_int_list, default=[2, 3, 4, 5, 6, 7, 8, 9, 10], help="m 列表，逗号分隔")
    calib.add_argument("--sigma2", type=_float_list, default=[1.0, 4.0, 8.0], help="σ² 列表，逗号分隔")
    calib.add_argument("--alpha", type=float, default=0.05)
    calib.add_argument("--dims", type=_int_list, default=[80, 80, 80])
    calib.add_argument("--offset-step", type=int, default=8)
    calib.add_argument("--extent-step", type=int, default=8)
    calib.add_argument("--min-extent", type=int, default=None, help="L_M；缺省时按 --target-count 校准")
    calib.add_argument("--target-count", type=int, default=11954, help="目标 |Θ₀|")
    calib.add_argument("--gamma0", type=float, default=0.05)
    calib.add_argument("--gamma1", type=float, default=0.5)
    return parser


def run_calibrate(args) -> int:
    if len(args.dims) == 1:
        args.dims = args.dims * 3
    dims = tuple(args.dims)
    grid = ThetaGrid(offset_step=args.offset_step, extent_step=args.extent_step, min_extent=0,
                     gamma0=args.gamma0, gamma1=args.gamma1)
    if args.min_extent is None:
        min_extent, _ = calibrate_min_extent(dims, None, grid, args.target_count)
    else:
        min_extent = args.min_extent
    grid.min_extent = min_extent
    theta = enumerate_theta(dims, None, grid)
    table = critical_value_table(theta, args.m, args.sigma2, args.alpha)
    payload = {"dims": list(dims), "min_extent": min_extent, "theta_count": len(theta), "alpha": args.alpha,
               "critical_values": {str(s): {str(m): round(v, 4) for m, v in row.items()} for s, row in table.items()}}
    if args.format == "json":
        output = json.dumps(payload, ensure_ascii=False, indent=2) + "\n"
    else:
        lines = [f"|Θ₀| = {len(theta)}, L_M = {min_extent}, α = {args.alpha}",
                 "σ² \\ m " + "".join(f"{m:>9d}" for m in args.m)]
        for sigma2, row in table.items():
            lines.append(f"{sigma2:<7g}" + "".join(f"{row[m]:>9.4f}" for m in args.m))
        output = "\n".join(lines) + "\n"
    if args.out:
        atomic_write(os.path.join(args.out, f"critical_values.{args.format}"), output)
    sys.stdout.write(output)
    return EXIT_OK


def run_stages(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["output_dir"] = args.out
    cfg = load_pipeline_config(args.config, overrides)
    controller = FibreAnalysisController(cfg)
    stages = STAGES[args.command]
    if "simulate" in stages and cfg.simulation is None and args.command == "simulate":
        raise ConfigError("simulate 子命令需要 simulation 配置")
    _status(f"🔄 执行 {args.command}: 输出目录 {controller.output_dir}")
    report = controller.run(stages)
    sys.stdout.buffer.write(emit_report(report.to_dict(), args.format))
    sys.stdout.flush()
    if report.tests is not None:
        _status(f"📊 判决: {report.verdict}")
        if report.anomaly_detected:
            _status("⚠️ 检测到方向异常")
            return EXIT_ANOMALY
    _status("✅ 完成")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=args.threads):
            if args.command == "calibrate":
                return run_calibrate(args)
            return run_stages(args)
    except ConfigError as e:
        logger.error(f"配置无效: {e}")
        _status(f"❌ 配置无效: {e}")
        return EXIT_CONFIG
    except InvalidArgumentError as e:
        logger.error(f"参数无效: {e}")
        _status(f"❌ 参数无效: {e}")
        return EXIT_ERROR
    except FibreAnalysisError as e:
        logger.error(f"运行失败: {e}")
        _status(f"❌ 运行失败: {e}")
        return e.exit_code if e.exit_code in (EXIT_ERROR, EXIT_CONFIG) else EXIT_ERROR
    except Exception as e:
        logger.error(f"运行过程中出现错误: {e}")
        _status(f"❌ 运行过程中出现错误: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
