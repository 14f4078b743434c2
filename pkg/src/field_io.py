#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
纤维方向异常检测 - 文件读写

纤维列表 CSV、原始体数据与 JSON 描述文件、方向场与属性场 CSV、
检验结果与混合参数 JSON、后验 CSV。所有写操作都是原子的：
先写同目录下的临时文件，再 os.replace。
"""

import io
import json
import logging
import math
import os
import tempfile
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .changepoint import SuiteResult, TestResult
from .exceptions import FieldFormatError, InvalidArgumentError
from .fibre_sim import Fibre
from .field_types import DirectionField, GridSpec, ScalarField3
from .saem import MixtureParams, PosteriorField, WindowLabel

logger = logging.getLogger(__name__)

FIBRE_COLUMNS = ["p0x", "p0y", "p0z", "p1x", "p1y", "p1z", "radius"]
DIRECTION_COLUMNS = ["i1", "i2", "i3", "x", "y", "z"]
ATTRIBUTE_COLUMNS = ["i1", "i2", "i3", "value"]
POSTERIOR_COLUMNS = ["l1", "l2", "l3", "q", "label"]
RENORMALIZE_TOLERANCE = 1e-3
FLOAT_FORMAT = "%.17g"


def atomic_write(path: str, data: Union[str, bytes]):
    """写临时文件后替换目标文件"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def _write_frame(frame: pd.DataFrame, path: str):
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    atomic_write(path, buffer.getvalue())


def write_json(data: Dict[str, Any], path: str):
    atomic_write(path, json.dumps(data, ensure_ascii=False, indent=2))


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _read_table(path: str, columns: Sequence[str]) -> pd.DataFrame:
    """按字符串读入并检查表头"""
    if not os.path.isfile(path):
        raise FieldFormatError(f"文件不存在: {path}", 0)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise FieldFormatError("缺少表头", 1)
    except pd.errors.ParserError as e:
        raise FieldFormatError(f"CSV 解析失败: {e}", 0)
    header = [c.strip() for c in frame.columns]
    if header[:len(columns)] != list(columns):
        raise FieldFormatError(f"表头应为 {','.join(columns)}，实际为 {','.join(header)}", 1)
    frame.columns = header
    return frame


def _numeric(frame: pd.DataFrame, columns: Sequence[str], integer: bool = False) -> np.ndarray:
    """逐列转换为数值，第一处无法解析的单元格按行号报错（表头为第1行）"""
    values = frame[list(columns)].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if integer:
        bad |= np.isfinite(values) & (values != np.round(values))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raw = frame[columns[col]].iloc[row]
        raise FieldFormatError(f"列 {columns[col]} 的值无效: {raw!r}", int(row) + 2)
    return values.astype(np.int64) if integer else values


def save_fibres(fibres: Sequence[Fibre], path: str, include_layer: bool = False):
    """纤维列表 CSV：p0x,p0y,p0z,p1x,p1y,p1z,radius（可选 layer 列）"""
    columns = FIBRE_COLUMNS + (["layer"] if include_layer else [])
    frame = pd.DataFrame([f.to_dict() for f in fibres], columns=FIBRE_COLUMNS + ["layer"])[columns]
    _write_frame(frame, path)
    logger.info(f"写出纤维列表: {path} ({len(fibres)} 根)")


def load_fibres(path: str) -> List[Fibre]:
    frame = _read_table(path, FIBRE_COLUMNS)
    values = _numeric(frame, FIBRE_COLUMNS)
    layers = _numeric(frame, ["layer"], integer=True)[:, 0] if "layer" in frame.columns else np.zeros(len(frame), int)
    return [Fibre(p0=row[0:3], p1=row[3:6], radius=float(row[6]), layer=int(layer))
            for row, layer in zip(values, layers)]


def save_volume(volume: np.ndarray, path: str, voxel_size_um: float = 1.0):
    """原始小端 uint8 体数据 + 同名 .json 描述文件（dims, voxel_size_um）"""
    volume = np.ascontiguousarray(volume, dtype="<u1")
    atomic_write(path, volume.tobytes(order="C"))
    sidecar = {"dims": [int(d) for d in volume.shape], "voxel_size_um": float(voxel_size_um),
               "dtype": "uint8", "order": "C"}
    write_json(sidecar, os.path.splitext(path)[0] + ".json")
    logger.info(f"写出体数据: {path} {volume.shape}")


def load_volume(path: str) -> Tuple[np.ndarray, Dict[str, Any]]:
    sidecar = read_json(os.path.splitext(path)[0] + ".json")
    dims = tuple(int(d) for d in sidecar["dims"])
    data = np.fromfile(path, dtype="<u1")
    if data.size != int(np.prod(dims)):
        raise FieldFormatError(f"体数据大小 {data.size} 与描述 {dims} 不一致", 0)
    return data.reshape(dims), sidecar


def save_direction_field(field: DirectionField, path: str):
    """方向场 CSV：i1,i2,i3,x,y,z，索引从1开始"""
    frame = pd.DataFrame(field.indices + 1, columns=DIRECTION_COLUMNS[:3])
    for k, name in enumerate(DIRECTION_COLUMNS[3:]):
        frame[name] = field.directions[:, k] if len(field) else []
    _write_frame(frame, path)
    logger.info(f"写出方向场: {path} ({len(field)} 个单元)")


def load_direction_field(path: str, grid: Optional[GridSpec] = None, cell_edge: int = 1,
                         window_factor: int = 5) -> DirectionField:
    """读取方向场 CSV

    模长偏离1不超过 1e-3 的行被重新归一化，超出则报错；重复索引报错。
    没有给出 grid 时按最大索引推断网格尺寸。
    """
    frame = _read_table(path, DIRECTION_COLUMNS)
    indices = _numeric(frame, DIRECTION_COLUMNS[:3], integer=True) - 1
    directions = _numeric(frame, DIRECTION_COLUMNS[3:])
    if len(frame) and np.any(indices < 0):
        row = int(np.argwhere(np.any(indices < 0, axis=1))[0][0])
        raise FieldFormatError("索引必须从1开始", row + 2)

    norms = np.linalg.norm(directions, axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > RENORMALIZE_TOLERANCE):
        row = int(np.argmax(off > RENORMALIZE_TOLERANCE))
        raise FieldFormatError(f"不是单位向量: 模长 {norms[row]:.6f}", row + 2)
    renormalized = int((off > 0).sum())
    if renormalized:
        directions = directions / norms[:, None]
        if np.any(off > 1e-9):
            logger.warning(f"⚠️ {renormalized} 个方向被重新归一化")

    if len(indices):
        _, first, counts = np.unique(indices, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            seen = np.zeros(len(indices), dtype=bool)
            seen[first] = True
            row = int(np.argmax(~seen))
            raise FieldFormatError(f"重复的单元索引 {tuple(indices[row] + 1)}", row + 2)

    if grid is None:
        cells = tuple(int(v) + 1 for v in indices.max(axis=0)) if len(indices) else (1, 1, 1)
        grid = GridSpec(cell_edge=cell_edge, cells=cells, window_factor=window_factor)
    return DirectionField(grid=grid, indices=indices.reshape(-1, 3), directions=directions.reshape(-1, 3))


def save_attribute_field(field: ScalarField3, path: str):
    """属性场 CSV：i1,i2,i3,value，只写被占据的索引"""
    indices = np.argwhere(field.mask)
    frame = pd.DataFrame(indices + 1, columns=ATTRIBUTE_COLUMNS[:3])
    frame["value"] = field.values[field.mask] if len(indices) else []
    _write_frame(frame, path)


def load_attribute_field(path: str, dims: Optional[Tuple[int, int, int]] = None, name: str = "") -> ScalarField3:
    frame = _read_table(path, ATTRIBUTE_COLUMNS)
    indices = _numeric(frame, ATTRIBUTE_COLUMNS[:3], integer=True) - 1
    values = _numeric(frame, ["value"])[:, 0]
    if dims is None:
        dims = tuple(int(v) + 1 for v in indices.max(axis=0)) if len(indices) else (1, 1, 1)
    if len(indices) and (np.any(indices < 0) or np.any(indices >= np.array(dims))):
        row = int(np.argwhere(np.any((indices < 0) | (indices >= np.array(dims)), axis=1))[0][0])
        raise FieldFormatError(f"索引超出范围 {dims}", row + 2)
    grid_values = np.zeros(dims)
    mask = np.zeros(dims, dtype=bool)
    if len(indices):
        grid_values[tuple(indices.T)] = values
        mask[tuple(indices.T)] = True
    return ScalarField3(values=grid_values, mask=mask, name=name or os.path.splitext(os.path.basename(path))[0])


def save_test_result(result: Union[TestResult, SuiteResult], path: str):
    write_json(result.to_dict(), path)


def load_test_result(path: str) -> Union[TestResult, SuiteResult]:
    data = read_json(path)
    if "results" in data:
        return SuiteResult(results=[TestResult.from_dict(r) for r in data["results"]], alpha=data["alpha"])
    return TestResult.from_dict(data)


def save_posterior(posterior: PosteriorField, labels: Sequence[WindowLabel], path: str):
    """后验 CSV：l1,l2,l3,q,label，窗口索引从1开始"""
    if posterior.indices is None:
        raise InvalidArgumentError("后验缺少窗口索引")
    frame = pd.DataFrame(np.asarray(posterior.indices, dtype=np.int64) + 1, columns=POSTERIOR_COLUMNS[:3])
    frame["q"] = posterior.q
    frame["label"] = [label.value for label in labels]
    _write_frame(frame, path)


def load_posterior(path: str) -> Tuple[PosteriorField, np.ndarray]:
    frame = _read_table(path, POSTERIOR_COLUMNS)
    indices = _numeric(frame, POSTERIOR_COLUMNS[:3], integer=True) - 1
    q = _numeric(frame, ["q"])[:, 0]
    try:
        labels = np.array([WindowLabel(v.strip()) for v in frame["label"]], dtype=object)
    except ValueError as e:
        raise FieldFormatError(f"未知标签: {e}", 0)
    return PosteriorField(q=q, indices=indices), labels


def save_params(params: MixtureParams, path: str, extra: Optional[Dict[str, Any]] = None):
    data = params.to_dict()
    if extra:
        data.update(extra)
    write_json(data, path)


def load_params(path: str) -> MixtureParams:
    return MixtureParams.from_dict(read_json(path))


def format_p_value(p_bound: float, log10_p: Optional[float] = None) -> str:
    """科学计数法；下溢为0时用对数值还原"""
    if p_bound > 0:
        return f"{p_bound:.3e}"
    if log10_p is None or not math.isfinite(log10_p):
        return "0"
    exponent = math.floor(log10_p)
    mantissa = 10 ** (log10_p - exponent)
    return f"{mantissa:.3f}e{exponent:+d}"


def emit_report(report: Dict[str, Any], fmt: str = "json") -> bytes:
    """报告输出：json 为稳定结构；text 为 属性/样本方差/统计量/p值 表格"""
    if fmt == "json":
        return json.dumps(report, ensure_ascii=False, indent=2).encode("utf-8")
    if fmt != "text":
        raise InvalidArgumentError(f"未知的输出格式: {fmt}")
    lines = []
    header = f"{'属性':<10}{'样本方差':>14}{'检验统计量':>14}{'p值上界':>14}{'临界值':>12}  判决"
    lines.append(header)
    lines.append("-" * 72)
    for row in (report.get("tests") or {}).get("results", []):
        lines.append(
            f"{row['attribute']:<10}{row['sample_variance']:>14.5f}{row['statistic']:>14.5f}"
            f"{format_p_value(row['p_bound'], row.get('log10_p_bound')):>14}{row['y_alpha']:>12.5f}  {row['decision']}"
        )
    tests = report.get("tests")
    if tests:
        lines.append(f"总体判决: {tests['verdict']} (α = {tests['alpha']})")
    clustering = report.get("clustering")
    if clustering:
        lines.append(f"聚类: β̂ = {clustering['beta_hat']:.4f}, 异常窗口 {clustering['label_counts'].get('anomaly', 0)}"
                     f" / {sum(clustering['label_counts'].values())}")
        box = clustering.get("anomaly_bounding_box")
        if box:
            lines.append(f"异常区域包围盒（体素）: {box['lower']} - {box['upper']}")
    return ("\n".join(lines) + "\n").encode("utf-8")
