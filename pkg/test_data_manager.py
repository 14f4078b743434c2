#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
测试运行结果管理工具与环境配置工具
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import json

import pandas as pd
import pytest

from data_manager import RunDataManager
from setup_env import check_log_level, check_run_configs, create_env_file


def _test_row(attribute, decision, statistic=0.1):
    return {"attribute": attribute, "sample_variance": 0.05, "statistic": statistic, "y_alpha": 0.2,
            "p_bound": 0.5 if decision == "accept" else 1e-6, "log10_p_bound": -0.3 if decision == "accept" else -6.0,
            "decision": decision}


def _write_report(directory, report):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "report.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, ensure_ascii=False)


@pytest.fixture
def runs_dir(tmp_path):
    root = tmp_path / "runs"
    _write_report(root / "layered" / "seed1", {
        "config": {"seed": 1},
        "verdict": "reject",
        "tests": {"alpha": 0.05, "verdict": "reject",
                  "results": [_test_row("x", "reject", 0.4), _test_row("y", "accept"),
                              _test_row("z", "accept"), _test_row("entropy", "reject", 0.9)]},
        "clustering": {"beta_hat": 0.68, "misclassification": 0.02},
    })
    _write_report(root / "homogeneous", {
        "config": {"seed": 2},
        "verdict": "accept",
        "tests": {"alpha": 0.05, "verdict": "accept",
                  "results": [_test_row(a, "accept") for a in ("x", "y", "z", "entropy")]},
        "clustering": None,
    })
    _write_report(root / "fields_only", {"config": {"seed": 3}, "verdict": "accept", "tests": None,
                                         "clustering": None})
    (root / "broken").mkdir()
    (root / "broken" / "report.json").write_text("{", encoding="utf-8")
    return str(root)


def test_load_reports(runs_dir):
    manager = RunDataManager(runs_dir)
    runs = sorted(r["_run"] for r in manager.reports)
    assert runs == ["fields_only", "homogeneous", os.path.join("layered", "seed1")]
    assert manager.get_report("homogeneous")["config"]["seed"] == 2
    assert manager.get_report("missing") is None


def test_statistics(runs_dir):
    stats = RunDataManager(runs_dir).get_statistics()
    assert stats["total_runs"] == 3
    assert stats["tested_runs"] == 2
    assert stats["verdicts"] == {"reject": 1, "accept": 1}
    assert stats["rejections"] == {"x": 1, "entropy": 1}
    assert stats["clustered_runs"] == 1
    assert stats["beta_hat"] == [0.68]
    assert stats["misclassification"] == [0.02]


def test_summary_frame_and_export(runs_dir, tmp_path, capsys):
    manager = RunDataManager(runs_dir)
    frame = manager.summary_frame()
    assert len(frame) == 8
    layered = frame[frame["run"] == os.path.join("layered", "seed1")]
    assert list(layered["decision"]) == ["reject", "accept", "accept", "reject"]
    assert set(layered["beta_hat"]) == {0.68}

    path = tmp_path / "summary.csv"
    manager.export_to_csv(str(path))
    assert len(pd.read_csv(path)) == 8

    manager.print_statistics()
    assert "运行总数: 3" in capsys.readouterr().out


def test_missing_runs_dir(tmp_path, capsys):
    manager = RunDataManager(str(tmp_path / "nothing"))
    assert manager.reports == []
    assert manager.get_statistics() == {}
    assert manager.summary_frame().empty
    manager.print_statistics()
    assert "无数据" in capsys.readouterr().out


def test_create_env_file(tmp_path):
    example = tmp_path / "env_example.txt"
    env = tmp_path / ".env"
    assert not create_env_file(str(env), str(example))
    example.write_text("LOG_LEVEL=DEBUG\n", encoding="utf-8")
    assert create_env_file(str(env), str(example))
    assert env.read_text(encoding="utf-8") == "LOG_LEVEL=DEBUG\n"
    assert create_env_file(str(env), str(example))


def test_check_log_level(tmp_path):
    env = tmp_path / ".env"
    env.write_text("LOG_LEVEL=warning\n", encoding="utf-8")
    assert check_log_level(str(env))
    env.write_text("LOG_LEVEL=loud\n", encoding="utf-8")
    assert not check_log_level(str(env))


def test_check_run_configs(tmp_path):
    assert check_run_configs()
    (tmp_path / "bad.conf").write_text("simulation.preset=layered\ntest.alpha=2\n", encoding="utf-8")
    assert not check_run_configs(str(tmp_path))
    assert not check_run_configs(str(tmp_path / "missing"))


if __name__ == '__main__':
    pytest.main([__file__, "-v"])
