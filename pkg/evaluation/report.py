"""
评测报告：逐序列与汇总指标、CSV 输出
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from evaluation.metrics import Regions, error_map, fdd, lip_errors, lip_offset_curve, lve, mve
from models import MotionSequence, ValidationError
from storage.serialize import load_motion

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.10g'
PER_SEQUENCE_COLUMNS = ['seq_id', 'lve', 'fdd', 'mve', 'n_frames']


@dataclass
class MetricReport:
    """
    一组序列的评测结果。

    Attributes:
        lve: 各序列 LVE 的平均（默认 mm²）
        fdd: 各序列 FDD 的平均（mm）
        per_frame_max_lip_err: 所有帧（按序列顺序拼接）的唇部最大误差
        per_vertex_mean_err: 每个顶点在所有帧上的平均欧氏误差
        mve: 平均顶点误差
        abs_fdd: |FDD| 的平均
        per_sequence: 逐序列指标表
        meta: 检查点、语料、种子等附加信息
    """
    lve: float
    fdd: float
    per_frame_max_lip_err: np.ndarray
    per_vertex_mean_err: np.ndarray
    mve: float = 0.0
    abs_fdd: float = 0.0
    per_sequence: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=PER_SEQUENCE_COLUMNS))
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lve >= 0:
            raise ValidationError(f"LVE must be non-negative, got {self.lve}")
        for name in ('per_frame_max_lip_err', 'per_vertex_mean_err'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} contains non-finite values")

    def aggregate(self) -> Dict[str, float]:
        return {'lve': self.lve, 'fdd': self.fdd, 'mve': self.mve, 'abs_fdd': self.abs_fdd,
                'sequences': float(len(self.per_sequence))}


def evaluate_corpus(pairs: Iterable[Tuple[str, MotionSequence, MotionSequence]], mesh: Regions,
                    squared: bool = True, variance: bool = False,
                    meta: Optional[Dict] = None) -> MetricReport:
    """
    对 (seq_id, 预测, 真值) 逐条计算指标并汇总。

    汇总值是逐序列指标的算术平均。
    """
    rows, frame_errs, vertex_sums, total_frames = [], [], None, 0
    for seq_id, pred, gt in pairs:
        seq_lve = lve(pred, gt, mesh, squared)
        seq_fdd = fdd(pred, gt, mesh, variance)
        emap = error_map(pred, gt)
        rows.append({'seq_id': seq_id, 'lve': seq_lve, 'fdd': seq_fdd, 'mve': float(emap.mean()),
                     'n_frames': emap.shape[0]})
        frame_errs.append(lip_errors(pred, gt, mesh, squared))
        vertex_sums = emap.sum(axis=0) if vertex_sums is None else vertex_sums + emap.sum(axis=0)
        total_frames += emap.shape[0]
    if not rows:
        raise ValidationError("no sequences to evaluate")

    table = pd.DataFrame(rows, columns=PER_SEQUENCE_COLUMNS)
    report = MetricReport(
        lve=float(np.mean(table['lve'].to_numpy())),
        fdd=float(np.mean(table['fdd'].to_numpy())),
        per_frame_max_lip_err=np.concatenate(frame_errs),
        per_vertex_mean_err=vertex_sums / total_frames,
        mve=float(np.mean(table['mve'].to_numpy())),
        abs_fdd=float(np.mean(np.abs(table['fdd'].to_numpy()))),
        per_sequence=table,
        meta=dict(meta or {}),
    )
    logger.info("evaluated %d sequences: LVE %.6g, FDD %.6g", len(rows), report.lve, report.fdd)
    return report


def motion_pairs_from_dirs(pred_dir: Union[str, Path], gt_dir: Union[str, Path]):
    """按文件名配对两个目录下的 <seq_id>.kmtf 运动文件。"""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_files = sorted(pred_dir.glob('*.kmtf'))
    if not pred_files:
        raise ValidationError(f"{pred_dir}: no motion files")
    pairs = []
    for path in pred_files:
        gt_path = gt_dir / path.name
        if not gt_path.exists():
            raise ValidationError(f"no ground truth for {path.stem} in {gt_dir}")
        pairs.append((path.stem, load_motion(path)[0], load_motion(gt_path)[0]))
    return pairs


def _with_hash(df: pd.DataFrame, config_hash: Optional[str]) -> pd.DataFrame:
    if config_hash is None:
        return df
    df = df.copy()
    df['config_hash'] = config_hash
    return df


def write_csv(df: pd.DataFrame, path: Union[str, Path], config_hash: Optional[str] = None) -> Path:
    """所有 CSV 统一的写法：固定浮点格式、不写索引，可附带 config_hash 列。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _with_hash(df, config_hash).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def write_report(report: MetricReport, out_dir: Union[str, Path], config_hash: Optional[str] = None,
                 prefix: str = "") -> Dict[str, Path]:
    """写 per_sequence.csv 与 aggregate.csv。"""
    out_dir = Path(out_dir)
    aggregate = pd.DataFrame([{'metric': k, 'value': v} for k, v in report.aggregate().items()])
    return {
        'per_sequence': write_csv(report.per_sequence, out_dir / f"{prefix}per_sequence.csv", config_hash),
        'aggregate': write_csv(aggregate, out_dir / f"{prefix}aggregate.csv", config_hash),
    }


def error_heatmap_frame(pred: MotionSequence, gt: MotionSequence) -> pd.DataFrame:
    """(frame, vertex, err) 长表。"""
    emap = error_map(pred, gt)
    n, v = emap.shape
    return pd.DataFrame({'frame': np.repeat(np.arange(n), v), 'vertex': np.tile(np.arange(v), n),
                         'err': emap.reshape(-1)})


def lip_curve_frame(seq: MotionSequence, mesh: Regions, key_indices: Sequence[int] = ()) -> pd.DataFrame:
    """(frame, lip_offset, is_key) 表，行数等于帧数。"""
    curve = lip_offset_curve(seq, mesh)
    is_key = np.zeros(curve.size, dtype=np.int64)
    is_key[np.asarray(key_indices, dtype=np.int64)] = 1
    return pd.DataFrame({'frame': np.arange(curve.size), 'lip_offset': curve, 'is_key': is_key})
