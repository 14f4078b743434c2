#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测主控制器

按顺序执行 模拟 → 方向场与属性场 → 变点检验 → 聚类定位，
每个阶段的中间结果都写入输出目录，最后生成报告。

功能：
1. 模拟分层/均匀 RSA 纤维样本，或读入已有的方向场
2. 计算折叠方向场、窗口平均局部方向（MLD）与方向熵场
3. 对 x̃、ỹ、z̃、Ê 四个属性做 Bonferroni 校正的变点检验
4. 用 SAEM（可选空间平滑）在窗口属性上分离均匀区域与异常区域
"""

import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy
import sklearn

from . import __version__
from .changepoint import AttributeTestSettings, SuiteResult, TailBoundParams, ThetaGrid, run_attribute_suite
from .config import PipelineConfig
from .entropy import NnConfig, PluginConfig
from .exceptions import StageError
from .fibre_sim import Fibre, RsaConfig, generate_rsa, homogeneous_rsa_config, layer_of_window, \
    layered_rsa_config, local_direction_field, misaligned_boundaries, voxelize
from .field_io import atomic_write, emit_report, load_direction_field, save_attribute_field, save_direction_field, \
    save_fibres, save_params, save_posterior, save_test_result, save_volume
from .field_pipeline import attribute_matrix, compute_mld, entropy_field, fold_attributes, mld_fields, \
    WindowAggregate, partition_windows, window_coordinates
from .field_types import DirectionField, GridSpec, ScalarField3
from .saem import Localization, MixtureParams, SaemConfig, WindowLabel, balanced_misclassification, classify, \
    localize_anomaly

logger = logging.getLogger(__name__)


@dataclass
class FieldBundle:
    """方向场及由它导出的全部属性场"""
    grid: GridSpec
    directions: DirectionField
    folded: Tuple[ScalarField3, ScalarField3, ScalarField3]
    aggregates: List[WindowAggregate]
    mld: Tuple[ScalarField3, ScalarField3, ScalarField3]
    entropy: ScalarField3


@dataclass
class ClusteringSummary:
    """聚类阶段的汇总"""
    selection: str
    spatial: bool
    beta_hat: float
    beta_em: float
    params: MixtureParams
    iterations: int
    converged: bool
    label_counts: Dict[str, int]
    anomaly_bounding_box: Optional[Dict[str, List[int]]] = None
    misclassification: Optional[float] = None
    misclassification_plain: Optional[float] = None
    bounding_box_jaccard: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "selection": self.selection,
            "spatial": self.spatial,
            "beta_hat": float(self.beta_hat),
            "beta_em": float(self.beta_em),
            "params": self.params.to_dict(),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "label_counts": dict(self.label_counts),
            "anomaly_bounding_box": self.anomaly_bounding_box,
            "misclassification": self.misclassification,
            "misclassification_plain": self.misclassification_plain,
            "bounding_box_jaccard": self.bounding_box_jaccard,
        }


@dataclass
class Report:
    """一次运行的报告"""
    config: Dict[str, Any]
    tests: Optional[SuiteResult] = None
    clustering: Optional[ClusteringSummary] = None
    timings: Dict[str, float] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return self.tests.verdict if self.tests is not None else "accept"

    @property
    def anomaly_detected(self) -> bool:
        return self.verdict == "reject"

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        data = {
            "config": self.config,
            "versions": {
                "package": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "scikit-learn": sklearn.__version__,
            },
            "verdict": self.verdict,
            "tests": None if self.tests is None else self.tests.to_dict(),
            "clustering": None if self.clustering is None else self.clustering.to_dict(),
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        if include_timings:
            data["timings"] = {k: round(v, 3) for k, v in self.timings.items()}
        return data


def anomaly_bounding_box(indices: np.ndarray, anomaly: np.ndarray, grid: GridSpec) -> Optional[Dict[str, List[int]]]:
    """异常窗口的体素包围盒 [lower, upper)"""
    if not np.any(anomaly):
        return None
    chosen = np.asarray(indices)[anomaly]
    lower = chosen.min(axis=0) * grid.window_edge
    upper = (chosen.max(axis=0) + 1) * grid.window_edge
    return {"lower": [int(v) for v in lower], "upper": [int(v) for v in upper]}


def box_jaccard(a: Optional[Dict[str, List[int]]], b: Optional[Dict[str, List[int]]]) -> float:
    """两个 [lower, upper) 体素盒的交并比，任一为空时为 0"""
    if a is None or b is None:
        return 0.0
    lower_a, upper_a = np.asarray(a["lower"], float), np.asarray(a["upper"], float)
    lower_b, upper_b = np.asarray(b["lower"], float), np.asarray(b["upper"], float)
    overlap = np.clip(np.minimum(upper_a, upper_b) - np.maximum(lower_a, lower_b), 0.0, None).prod()
    union = (upper_a - lower_a).prod() + (upper_b - lower_b).prod() - overlap
    return float(overlap / union) if union > 0 else 0.0


class FibreAnalysisController:
    """纤维方向异常检测主控制器"""

    def __init__(self, cfg: PipelineConfig, output_dir: Optional[str] = None):
        self.cfg = cfg
        self.output_dir = output_dir or cfg.output_dir
        sim_seed, cluster_seed = np.random.SeedSequence(cfg.seed).spawn(2)
        self.sim_rng = np.random.default_rng(sim_seed)
        self.cluster_rng = np.random.default_rng(cluster_seed)

        self.rsa_config: Optional[RsaConfig] = None
        self.fibres: Optional[List[Fibre]] = None
        self.fields: Optional[FieldBundle] = None
        self.suite: Optional[SuiteResult] = None
        self.localization: Optional[Localization] = None
        self.clustering: Optional[ClusteringSummary] = None
        self.artifacts: Dict[str, str] = {}
        self.timings: Dict[str, float] = {}
        logger.info(f"主控制器初始化完成: 输出目录 {self.output_dir}")

    def _path(self, name: str, filename: str) -> str:
        self.artifacts[name] = filename
        return os.path.join(self.output_dir, filename)

    def _stage(self, name: str, func: Callable[[], Any]) -> Any:
        start = time.perf_counter()
        try:
            logger.info(f"🔄 开始阶段: {name}")
            return func()
        except StageError:
            raise
        except Exception as e:
            logger.error(f"阶段 {name} 失败: {e}")
            raise StageError(name, e, dict(self.artifacts)) from e
        finally:
            self.timings[name] = time.perf_counter() - start

    def build_rsa_config(self) -> RsaConfig:
        sim = self.cfg.simulation
        common = dict(dims=sim.dims, fibre_length=sim.fibre_length, radius=sim.radius,
                      volume_fraction=sim.volume_fraction, max_attempts=sim.max_attempts)
        spec = sim.layer_spec()
        if sim.preset == "homogeneous":
            axis, beta = spec[0]
            return homogeneous_rsa_config(axis=axis, beta=beta, **common)
        return layered_rsa_config(layers=spec, **common)

    def simulate(self) -> List[Fibre]:
        """生成 RSA 纤维样本并写出纤维列表"""
        def run():
            self.rsa_config = self.build_rsa_config()
            self.fibres = generate_rsa(self.rsa_config, self.sim_rng)
            save_fibres(self.fibres, self._path("fibres", "fibres.csv"))
            if self.cfg.simulation.write_volume:
                save_volume(voxelize(self.fibres, self.rsa_config.dims), self._path("volume", "volume.raw"),
                            self.cfg.simulation.voxel_size_um)
            return self.fibres
        return self._stage("simulate", run)

    def extract_fields(self) -> FieldBundle:
        """方向场、折叠属性场、MLD 与熵场"""
        def run():
            grid_cfg = self.cfg.grid
            if self.cfg.simulation is not None:
                if self.fibres is None:
                    self.simulate()
                directions = local_direction_field(self.fibres, grid_cfg.cell_edge, self.rsa_config.dims,
                                                   grid_cfg.window_factor)
                misaligned = misaligned_boundaries(self.rsa_config, directions.grid.window_edge)
                if misaligned:
                    logger.warning(f"⚠️ 层界面 {misaligned} 不是窗口边长 {directions.grid.window_edge} 的整数倍，"
                                   "跨界窗口的属性混合两层，定位误差会偏高")
            else:
                source = self.cfg.input
                grid = None
                if source.cells is not None:
                    grid = GridSpec(cell_edge=grid_cfg.cell_edge, cells=source.cells,
                                    window_factor=grid_cfg.window_factor)
                directions = load_direction_field(source.directions, grid, grid_cfg.cell_edge,
                                                  grid_cfg.window_factor)
            save_direction_field(directions, self._path("directions", "directions.csv"))

            grid = directions.grid
            windows = partition_windows(grid, directions)
            folded = fold_attributes(directions)
            aggregates = compute_mld(directions, windows)
            mld = mld_fields(aggregates, grid)
            entropy_cfg = self.cfg.entropy
            if entropy_cfg.estimator == "plugin":
                estimator = PluginConfig(bandwidth=entropy_cfg.bandwidth, kernel=entropy_cfg.kernel)
            else:
                estimator = NnConfig(penalty_radius=entropy_cfg.penalty_radius)
            entropy = entropy_field(directions, windows, estimator, entropy_cfg.min_members)

            for attr in folded + mld + (entropy,):
                save_attribute_field(attr, self._path(attr.name, f"{attr.name}.csv"))
            self.fields = FieldBundle(grid=grid, directions=directions, folded=folded,
                                      aggregates=aggregates, mld=mld, entropy=entropy)
            logger.info(f"属性场完成: {len(directions)} 个单元, {len(aggregates)} 个非空窗口, "
                        f"熵场 {entropy.n_occupied} 个窗口")
            return self.fields
        return self._stage("fields", run)

    def _settings(self, section) -> AttributeTestSettings:
        test_cfg = self.cfg.test
        theta = ThetaGrid(offset_step=section.offset_step, extent_step=section.extent_step,
                          min_extent=section.min_extent, gamma0=test_cfg.gamma0, gamma1=test_cfg.gamma1)
        return AttributeTestSettings(theta=theta, tail=TailBoundParams(m=section.m, sigma2=section.sigma2,
                                                                       M0=section.M0))

    def run_tests(self) -> SuiteResult:
        """四属性变点检验"""
        def run():
            if self.fields is None:
                self.extract_fields()
            x_field, y_field, z_field = self.fields.folded
            self.suite = run_attribute_suite(
                x_field, y_field, z_field, self.fields.entropy,
                self._settings(self.cfg.test.direction), self._settings(self.cfg.test.entropy),
                alpha=self.cfg.test.alpha,
            )
            save_test_result(self.suite, self._path("tests", "tests.json"))
            return self.suite
        return self._stage("test", run)

    def _ground_truth(self, indices: np.ndarray) -> Optional[np.ndarray]:
        """与第一层参数不同的层视为真实异常"""
        if self.rsa_config is None or not self.rsa_config.layers:
            return None
        layers = layer_of_window(self.rsa_config, self.fields.grid, indices)
        reference = self.rsa_config.layers[0].acg
        differs = np.array([
            not (np.allclose(layer.acg.preferred_axis, reference.preferred_axis) and layer.acg.beta == reference.beta)
            for layer in self.rsa_config.layers
        ])
        return differs[np.clip(layers, 0, len(differs) - 1)]

    def cluster(self) -> ClusteringSummary:
        """窗口属性的 SAEM 分离与异常定位"""
        def run():
            if self.fields is None:
                self.extract_fields()
            cluster_cfg = self.cfg.cluster
            grid = self.fields.grid
            indices, data = attribute_matrix(self.fields.entropy, self.fields.mld, cluster_cfg.selection)
            coords = window_coordinates(grid, indices)
            saem_cfg = SaemConfig(
                max_iterations=cluster_cfg.max_iterations,
                tolerance=cluster_cfg.tolerance,
                radius=cluster_cfg.radius if cluster_cfg.radius is not None else float(grid.window_edge),
                neighbour_threshold=cluster_cfg.neighbour_threshold,
                n_fields=cluster_cfg.n_fields,
                max_attempts=cluster_cfg.max_attempts,
            )
            loc = localize_anomaly(data, coords, saem_cfg, self.cluster_rng, spatial=cluster_cfg.spatial,
                                   indices=indices)
            self.localization = loc
            anomaly = loc.anomaly_mask
            counts = Counter(label.value for label in loc.labels)

            misclassification = plain = jaccard = None
            truth = self._ground_truth(indices)
            if truth is not None:
                misclassification = balanced_misclassification(anomaly, truth)
                plain_q = loc.fit.posterior.q
                plain_labels = classify(plain_q, float(plain_q.mean()))
                plain = balanced_misclassification(plain_labels == WindowLabel.ANOMALY, truth)
                if np.any(truth):
                    jaccard = box_jaccard(anomaly_bounding_box(indices, anomaly, grid),
                                          anomaly_bounding_box(indices, truth, grid))

            self.clustering = ClusteringSummary(
                selection=cluster_cfg.selection,
                spatial=cluster_cfg.spatial,
                beta_hat=loc.beta_hat,
                beta_em=loc.fit.beta_em,
                params=loc.fit.params,
                iterations=loc.fit.iterations,
                converged=loc.fit.converged,
                label_counts={label.value: int(counts.get(label.value, 0)) for label in WindowLabel},
                anomaly_bounding_box=anomaly_bounding_box(indices, anomaly, grid),
                misclassification=misclassification,
                misclassification_plain=plain,
                bounding_box_jaccard=jaccard,
            )
            save_posterior(loc.posterior, loc.labels, self._path("posterior", "posterior.csv"))
            save_params(loc.fit.params, self._path("params", "params.json"),
                        extra={"beta_hat": loc.beta_hat, "iterations": loc.fit.iterations})
            return self.clustering
        return self._stage("cluster", run)

    def report(self) -> Report:
        return Report(config=self.cfg.echo(), tests=self.suite, clustering=self.clustering,
                      timings=dict(self.timings), artifacts=dict(self.artifacts))

    def run(self, stages: Tuple[str, ...] = ("simulate", "fields", "test", "cluster")) -> Report:
        """按顺序执行各阶段并写出报告"""
        if self.cfg.simulation is not None and "simulate" in stages:
            self.simulate()
        if "fields" in stages:
            self.extract_fields()
        if "test" in stages:
            self.run_tests()
        if "cluster" in stages:
            self.cluster()
        report = self.report()
        self.artifacts["report"] = "report.json"
        report.artifacts = dict(self.artifacts)
        atomic_write(os.path.join(self.output_dir, "report.json"), emit_report(report.to_dict(), "json"))
        logger.info(f"✅ 运行完成: 判决 {report.verdict}")
        return report


def run_pipeline(cfg: PipelineConfig, output_dir: Optional[str] = None) -> Report:
    """完整流水线：模拟 → 属性场 → 检验 → 聚类"""
    return FibreAnalysisController(cfg, output_dir).run()
