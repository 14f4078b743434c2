#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
测试主控制器：小规模分层样本上的完整流水线、读入方向场的运行与阶段错误
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import json

import numpy as np
import pytest

from src.config import Config, build_pipeline_config, load_pipeline_config
from src.exceptions import FieldFormatError, StageError
from src.field_io import load_direction_field, load_posterior, load_test_result
from src.field_types import GridSpec
from src.pipeline import FibreAnalysisController, Report, anomaly_bounding_box, box_jaccard, run_pipeline

# 180³ 体素、Δ = 12、M = 5：15³ 个小单元、3³ 个窗口，三层各占一层窗口
SMALL_RUN = {
    "seed": "7",
    "simulation.preset": "layered",
    "simulation.dims": "180",
    "simulation.fibre_length": "30",
    "simulation.radius": "1.5",
    "simulation.volume_fraction": "0.03",
    "simulation.layers": "x:0.1,y:0.5,x:0.1",
    "grid.cell_edge": "12",
    "grid.window_factor": "5",
    "test.direction.offset_step": "3",
    "test.direction.extent_step": "3",
    "test.direction.min_extent": "3",
    "test.entropy.offset_step": "1",
    "test.entropy.extent_step": "1",
    "test.entropy.min_extent": "1",
    "cluster.selection": "entropy",
    "cluster.neighbour_threshold": "1",
    "cluster.n_fields": "20",
}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("layered")
    cfg = build_pipeline_config({**SMALL_RUN, "output_dir": str(out)})
    report = run_pipeline(cfg)
    return str(out), report


def test_pipeline_writes_artifacts(small_run):
    out, report = small_run
    expected = {"fibres.csv", "directions.csv", "x_folded.csv", "y_folded.csv", "z_folded.csv",
                "mld_x.csv", "mld_y.csv", "mld_z.csv", "entropy.csv", "tests.json",
                "posterior.csv", "params.json", "report.json"}
    assert expected <= set(os.listdir(out))
    assert set(report.artifacts.values()) == expected
    assert set(report.timings) == {"simulate", "fields", "test", "cluster"}


def test_pipeline_report_contents(small_run):
    out, report = small_run
    with open(os.path.join(out, "report.json"), encoding="utf-8") as f:
        data = json.load(f)
    assert data["verdict"] in ("accept", "reject")
    assert data["verdict"] == report.verdict
    assert data["config"]["seed"] == 7
    assert set(data["versions"]) == {"package", "numpy", "scipy", "scikit-learn"}
    assert [r["attribute"] for r in data["tests"]["results"]] == ["x", "y", "z", "entropy"]
    assert all(r["alpha"] == pytest.approx(0.0125) for r in data["tests"]["results"])

    clustering = data["clustering"]
    assert clustering["selection"] == "entropy"
    n_windows = sum(clustering["label_counts"].values())
    assert 0 < n_windows <= 27
    assert 0.0 <= clustering["misclassification"] <= 1.0
    assert 0.0 <= clustering["misclassification_plain"] <= 1.0

    suite = load_test_result(os.path.join(out, "tests.json"))
    assert suite.verdict == report.verdict


def test_pipeline_posterior_file(small_run):
    out, _ = small_run
    posterior, labels = load_posterior(os.path.join(out, "posterior.csv"))
    assert 0 < len(posterior) == len(labels) <= 27
    assert np.all((posterior.q >= 0) & (posterior.q <= 1))
    assert np.all(posterior.indices < 3)


def test_pipeline_reproducible(small_run, tmp_path):
    """同一种子得到同样的方向场与检验统计量"""
    out, report = small_run
    cfg = build_pipeline_config({**SMALL_RUN, "output_dir": str(tmp_path)})
    controller = FibreAnalysisController(cfg)
    suite = controller.run_tests()
    assert [r.statistic for r in suite.results] == [r.statistic for r in report.tests.results]
    with open(os.path.join(out, "directions.csv"), encoding="utf-8") as a, \
            open(os.path.join(tmp_path, "directions.csv"), encoding="utf-8") as b:
        assert a.read() == b.read()


def test_pipeline_from_direction_file(small_run, tmp_path):
    """读入已有方向场：跳过模拟阶段，不计算错分率"""
    out, report = small_run
    values = {k: v for k, v in SMALL_RUN.items() if not k.startswith("simulation.")}
    values.update({"input.directions": os.path.join(out, "directions.csv"), "input.cells": "15",
                   "output_dir": str(tmp_path)})
    controller = FibreAnalysisController(build_pipeline_config(values))
    result = controller.run(("fields", "test", "cluster"))
    assert "fibres" not in result.artifacts
    assert result.clustering.misclassification is None
    assert [r.statistic for r in result.tests.results] == pytest.approx(
        [r.statistic for r in report.tests.results])

    loaded = load_direction_field(os.path.join(tmp_path, "directions.csv"), GridSpec(12, (15, 15, 15)))
    assert len(loaded) == len(controller.fields.directions)


def test_stage_error_reports_stage(tmp_path):
    cfg = build_pipeline_config({"input.directions": str(tmp_path / "missing.csv"), "output_dir": str(tmp_path)})
    with pytest.raises(StageError) as info:
        FibreAnalysisController(cfg).run(("fields",))
    assert info.value.stage == "fields"
    assert isinstance(info.value.cause, FieldFormatError)
    assert info.value.exit_code == 1


def test_anomaly_bounding_box():
    grid = GridSpec(cell_edge=12, cells=(15, 15, 15), window_factor=5)
    indices = np.array([[0, 0, 0], [0, 1, 1], [2, 1, 1]])
    box = anomaly_bounding_box(indices, np.array([False, True, True]), grid)
    assert box == {"lower": [0, 60, 60], "upper": [180, 120, 120]}
    assert anomaly_bounding_box(indices, np.zeros(3, dtype=bool), grid) is None


def test_report_without_tests():
    report = Report(config={"seed": 0})
    assert report.verdict == "accept"
    assert not report.anomaly_detected
    data = report.to_dict(include_timings=False)
    assert "timings" not in data
    assert data["tests"] is None and data["clustering"] is None



def test_box_jaccard():
    slab = {"lower": [0, 0, 160], "upper": [480, 480, 320]}
    assert box_jaccard(slab, slab) == pytest.approx(1.0)
    assert box_jaccard(slab, {"lower": [0, 0, 0], "upper": [480, 480, 480]}) == pytest.approx(1.0 / 3.0)
    assert box_jaccard(slab, {"lower": [0, 0, 0], "upper": [480, 480, 160]}) == 0.0
    assert box_jaccard(slab, None) == 0.0


def _desk_run(tmp_path_factory, name):
    out = tmp_path_factory.mktemp(name)
    cfg = load_pipeline_config(os.path.join(Config.CONFIGS_DIR, f"{name}.conf"),
                               {"output_dir": str(out), "cluster.n_fields": "200"})
    return run_pipeline(cfg)


@pytest.fixture(scope="module")
def desk_layered(tmp_path_factory):
    """configs/layered.conf：480³ 体素、三层 x / y / x"""
    return _desk_run(tmp_path_factory, "layered")


@pytest.fixture(scope="module")
def desk_homogeneous(tmp_path_factory):
    return _desk_run(tmp_path_factory, "homogeneous")


def test_desk_layered_decisions(desk_layered):
    """中间层的首选轴与集中度都不同：x̃、ỹ、Ê 拒绝，z̃ 的层间差不足以拒绝"""
    decisions = {r.attribute: r.decision for r in desk_layered.tests.results}
    assert decisions == {"x": "reject", "y": "reject", "z": "accept", "entropy": "reject"}
    assert desk_layered.verdict == "reject"
    assert desk_layered.anomaly_detected


def test_desk_layered_localization(desk_layered):
    """异常窗口集中在中间层 z ∈ [160, 320)"""
    clustering = desk_layered.clustering
    assert clustering.misclassification < 0.15
    assert clustering.misclassification <= clustering.misclassification_plain
    middle = {"lower": [0, 0, 160], "upper": [480, 480, 320]}
    assert box_jaccard(clustering.anomaly_bounding_box, middle) >= 0.5
    assert clustering.bounding_box_jaccard >= 0.5
    assert abs(clustering.beta_hat - 0.5) > 0.1


def test_desk_homogeneous_accepts(desk_homogeneous):
    assert [r.decision for r in desk_homogeneous.tests.results] == ["accept"] * 4
    assert desk_homogeneous.verdict == "accept"
    assert desk_homogeneous.clustering.bounding_box_jaccard is None


if __name__ == '__main__':
    pytest.main([__file__, "-v"])
