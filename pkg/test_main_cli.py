#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
测试命令行入口：临界值表、配置错误的退出码与阶段子命令
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import json

import numpy as np
import pytest

from src.field_io import save_direction_field
from src.field_types import DirectionField, GridSpec
from src.main_cli import EXIT_ANOMALY, EXIT_CONFIG, EXIT_ERROR, EXIT_OK, build_parser, main

SMALL_CONF = """seed=3
simulation.preset=homogeneous
simulation.dims=120
simulation.fibre_length=30
simulation.radius=1.5
simulation.volume_fraction=0.02
simulation.layers=z:0.5
grid.cell_edge=12
grid.window_factor=5
"""


def test_parser_requires_config():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["pipeline"])
    args = build_parser().parse_args(["calibrate", "--m", "2,3", "--sigma2", "1,4"])
    assert args.m == [2, 3] and args.sigma2 == [1.0, 4.0]


def test_calibrate_json(tmp_path, capsys):
    code = main(["calibrate", "--dims", "24", "--offset-step", "4", "--extent-step", "4", "--min-extent", "4",
                 "--m", "1,2", "--sigma2", "1,4", "--format", "json", "--out", str(tmp_path)])
    assert code == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["dims"] == [24, 24, 24]
    assert payload["min_extent"] == 4
    assert payload["theta_count"] > 0
    table = payload["critical_values"]
    assert set(table) == {"1.0", "4.0"}
    # σ² 放大 4 倍，M₀ = σ 时临界值放大 2 倍
    assert table["4.0"]["2"] == pytest.approx(2 * table["1.0"]["2"], abs=2e-4)
    assert table["1.0"]["1"] < table["1.0"]["2"]
    assert (tmp_path / "critical_values.json").exists()


def test_calibrate_text(capsys):
    code = main(["calibrate", "--dims", "16,16,16", "--offset-step", "4", "--extent-step", "4",
                 "--min-extent", "4", "--m", "1", "--sigma2", "1"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("|Θ₀| = ")
    assert "L_M = 4" in out


def test_missing_config_exit_code(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "missing.conf")]) == EXIT_CONFIG


def test_invalid_alpha_exit_code(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text(SMALL_CONF + "test.alpha=0\n", encoding="utf-8")
    assert main(["test", "--config", str(path)]) == EXIT_CONFIG


def test_simulate_requires_simulation_section(tmp_path):
    path = tmp_path / "input.conf"
    path.write_text(f"input.directions={tmp_path / 'd.csv'}\n", encoding="utf-8")
    assert main(["simulate", "--config", str(path)]) == EXIT_CONFIG


def test_stage_failure_exit_code(tmp_path):
    path = tmp_path / "input.conf"
    path.write_text(f"input.directions={tmp_path / 'missing.csv'}\n", encoding="utf-8")
    assert main(["fields", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_ERROR


def test_fields_command_writes_report(tmp_path, capsys):
    path = tmp_path / "small.conf"
    path.write_text(SMALL_CONF, encoding="utf-8")
    out = tmp_path / "run"
    code = main(["fields", "--config", str(path), "--out", str(out), "--seed", "5", "--format", "json",
                 "--threads", "1"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["seed"] == 5
    assert report["tests"] is None
    assert (out / "directions.csv").exists()
    assert (out / "entropy.csv").exists()
    assert (out / "report.json").exists()


def _layered_direction_file(path):
    """20³ 个单元：z 方向中间 10 层沿 y，其余沿 x，带小扰动"""
    rng = np.random.default_rng(4)
    grid = GridSpec(cell_edge=4, cells=(20, 20, 20), window_factor=5)
    indices = np.array([[i, j, k] for i in range(20) for j in range(20) for k in range(20)])
    middle = (indices[:, 2] >= 5) & (indices[:, 2] < 15)
    axes = np.where(middle[:, None], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    directions = axes + 0.15 * rng.standard_normal(axes.shape)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    save_direction_field(DirectionField(grid=grid, indices=indices, directions=directions), str(path))


def test_anomaly_exit_code(tmp_path, capsys):
    """检验拒绝时 test 与 pipeline 子命令返回 10"""
    directions = tmp_path / "directions.csv"
    _layered_direction_file(directions)
    path = tmp_path / "input.conf"
    path.write_text(f"input.directions={directions}\ninput.cells=20\ngrid.cell_edge=4\ngrid.window_factor=5\n"
                    "test.direction.offset_step=5\ntest.direction.extent_step=5\ntest.direction.min_extent=5\n"
                    "test.direction.m=1\ntest.entropy.offset_step=1\ntest.entropy.extent_step=1\n"
                    "test.entropy.min_extent=1\ncluster.n_fields=20\n", encoding="utf-8")
    code = main(["test", "--config", str(path), "--out", str(tmp_path / "run"), "--format", "json"])
    assert code == EXIT_ANOMALY
    report = json.loads(capsys.readouterr().out)
    assert report["verdict"] == "reject"
    decisions = {r["attribute"]: r["decision"] for r in report["tests"]["results"]}
    assert decisions["x"] == "reject" and decisions["y"] == "reject"

    assert main(["pipeline", "--config", str(path), "--out", str(tmp_path / "full")]) == EXIT_ANOMALY


def test_exit_codes_distinct():
    assert len({EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ANOMALY}) == 4


if __name__ == '__main__':
    pytest.main([__file__, "-v"])
