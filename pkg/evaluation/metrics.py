"""
评测指标

LVE: 每帧唇部顶点最大（平方）L2 误差，对帧取平均。
FDD: 上半脸每个顶点位移范数随时间的标准差（或方差），预测减真值后对顶点取平均。
全部计算在 float64 中进行。
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from models import MeshSpec, MotionSequence, ValidationError
from models.validation import as_index_array
from utils.text_utils import load_json

MotionLike = Union[MotionSequence, np.ndarray]


@dataclass(frozen=True, eq=False)
class RegionMask:
    """唇部与上半脸顶点集合；真实网格由用户通过 JSON 掩码文件提供。"""
    lip_vertices: np.ndarray
    upper_face_vertices: np.ndarray
    vertex_count: int

    def __post_init__(self):
        lip = as_index_array(self.lip_vertices, "lip_vertices")
        upper = as_index_array(self.upper_face_vertices, "upper_face_vertices")
        for name, idx in (('lip_vertices', lip), ('upper_face_vertices', upper)):
            if idx.size == 0:
                raise ValidationError(f"mask {name} must be non-empty")
            if idx.min() < 0 or idx.max() >= self.vertex_count:
                raise ValidationError(f"mask {name} must lie in [0, {self.vertex_count})")
        object.__setattr__(self, 'lip_vertices', lip)
        object.__setattr__(self, 'upper_face_vertices', upper)

    @classmethod
    def from_mesh(cls, mesh: MeshSpec) -> 'RegionMask':
        return cls(mesh.lip_vertices, mesh.upper_face_vertices, mesh.vertex_count)


def load_mask_file(path: Union[str, Path], vertex_count: int) -> RegionMask:
    """读取 {"lip_vertices": [...], "upper_face_vertices": [...]}。"""
    doc = load_json(path)
    try:
        return RegionMask(doc['lip_vertices'], doc['upper_face_vertices'], vertex_count)
    except KeyError as e:
        raise ValidationError(f"mask file {path} is missing {e}") from e


Regions = Union[MeshSpec, RegionMask]


def _frames(x: MotionLike) -> np.ndarray:
    frames = x.frames if isinstance(x, MotionSequence) else np.asarray(x)
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise ValidationError(f"motion must be N×V×3, got shape {frames.shape}")
    return frames.astype(np.float64)


def _pair(pred: MotionLike, gt: MotionLike):
    if isinstance(pred, MotionSequence) and isinstance(gt, MotionSequence) and pred.fps != gt.fps:
        raise ValidationError(f"prediction at {pred.fps} fps, ground truth at {gt.fps} fps")
    p, g = _frames(pred), _frames(gt)
    if p.shape != g.shape:
        raise ValidationError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    return p, g


def _check_regions(frames: np.ndarray, regions: Regions) -> None:
    if frames.shape[1] != regions.vertex_count:
        raise ValidationError(f"motion has {frames.shape[1]} vertices, mesh has {regions.vertex_count}")


def lip_errors(pred: MotionLike, gt: MotionLike, mesh: Regions, squared: bool = True) -> np.ndarray:
    """每帧唇部顶点的最大误差（N 维）。"""
    p, g = _pair(pred, gt)
    _check_regions(p, mesh)
    sq = ((p[:, mesh.lip_vertices] - g[:, mesh.lip_vertices]) ** 2).sum(axis=2)
    worst = sq.max(axis=1)
    return worst if squared else np.sqrt(worst)


def lve(pred: MotionLike, gt: MotionLike, mesh: Regions, squared: bool = True) -> float:
    """唇部顶点误差（mm²；squared=False 时为 mm）。"""
    return float(lip_errors(pred, gt, mesh, squared).mean())


def dynamics(seq: MotionLike, mesh: Regions, variance: bool = False) -> np.ndarray:
    """上半脸每个顶点位移范数随时间的标准差（variance=True 时为方差）。"""
    frames = _frames(seq)
    _check_regions(frames, mesh)
    norms = np.sqrt((frames[:, mesh.upper_face_vertices] ** 2).sum(axis=2))
    return norms.var(axis=0) if variance else norms.std(axis=0)


def fdd(pred: MotionLike, gt: MotionLike, mesh: Regions, variance: bool = False) -> float:
    """上半脸动态偏差，带符号：预测比真值更“静”时为负。"""
    p, g = _pair(pred, gt)
    if p.shape[0] < 2:
        raise ValidationError(f"FDD needs at least 2 frames, got {p.shape[0]}")
    return float((dynamics(p, mesh, variance) - dynamics(g, mesh, variance)).mean())


def error_map(pred: MotionLike, gt: MotionLike) -> np.ndarray:
    """N×V 逐顶点欧氏距离。"""
    p, g = _pair(pred, gt)
    return np.sqrt(((p - g) ** 2).sum(axis=2))


def mve(pred: MotionLike, gt: MotionLike) -> float:
    """平均顶点误差（mm）。"""
    return float(error_map(pred, gt).mean())


def lip_offset_curve(seq: MotionLike, mesh: Regions) -> np.ndarray:
    """每帧唇部顶点相对模板的位移范数之和（N 维，mm）。"""
    frames = _frames(seq)
    _check_regions(frames, mesh)
    return np.sqrt((frames[:, mesh.lip_vertices] ** 2).sum(axis=2)).sum(axis=1)


def interp_reconstruct(curve: Sequence[float], key_indices: Sequence[int]) -> np.ndarray:
    """经过 (i, curve[i])，i ∈ I ∪ {0, N-1} 的分段线性插值。"""
    curve = np.asarray(curve, dtype=np.float64).reshape(-1)
    n = curve.size
    if n < 1:
        raise ValidationError("cannot reconstruct an empty curve")
    idx = as_index_array(key_indices, "key_indices")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"key indices must lie in [0, {n})")
    knots = np.unique(np.concatenate([idx, [0, n - 1]]))
    return np.interp(np.arange(n, dtype=np.float64), knots.astype(np.float64), curve[knots])


def rms(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))
