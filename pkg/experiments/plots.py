"""
绘图数据：从运行目录中整理损失曲线、唇部位移曲线与误差热图 CSV（不做渲染）
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd

from evaluation.metrics import lip_offset_curve
from evaluation.report import error_heatmap_frame, motion_pairs_from_dirs, write_csv
from models import ValidationError
from storage.serialize import load_key_motions, load_mesh
from utils.text_utils import load_json

logger = logging.getLogger(__name__)

LIP_CURVE_COLUMNS = ['seed', 'variant', 'seq_id', 'frame', 'lip_offset_gt', 'lip_offset_pred', 'is_key']


def _run_hash(run_dir: Path) -> Optional[str]:
    header = run_dir / 'config.json'
    return load_json(header).get('config_hash') if header.exists() else None


def loss_curves(run_dir: Path) -> pd.DataFrame:
    frames = []
    for path in sorted(run_dir.glob('seed_*/*_loss.csv')):
        log = pd.read_csv(path)
        log.insert(0, 'seed', int(path.parent.name.split('_', 1)[1]))
        frames.append(log.drop(columns='config_hash', errors='ignore'))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def emit_plots(run_dir: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
               heatmap_sequences: int = 1) -> Dict[str, Path]:
    """
    写出三类绘图数据：
        loss_curves.csv   seed, model, epoch, L_rec, L_vel, L_lat, L_ctc, total, split
        lip_curves.csv    seed, variant, seq_id, frame, lip_offset_gt, lip_offset_pred, is_key
        error_heatmap.csv seed, variant, seq_id, frame, vertex, err（每个变体前 heatmap_sequences 条）

    Args:
        run_dir: run_experiment / run_ablation_suite 的输出目录
        out_dir: 输出目录，默认 run_dir/plots
        heatmap_sequences: 每个变体输出热图的序列条数

    Raises:
        ValidationError: 目录中既没有损失日志也没有预测结果
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir / 'plots'
    config_hash = _run_hash(run_dir)
    written = {}

    losses = loss_curves(run_dir)
    if not losses.empty:
        written['loss_curves'] = write_csv(losses, out_dir / 'loss_curves.csv', config_hash)

    pred_dirs = sorted(run_dir.glob('seed_*/predictions/*'))
    if pred_dirs:
        mesh = load_mesh(run_dir / 'mesh.kmtf')
        curves, heatmaps = [], []
        for pred_dir in pred_dirs:
            seed = int(pred_dir.parent.parent.name.split('_', 1)[1])
            for i, (seq_id, pred, gt) in enumerate(motion_pairs_from_dirs(pred_dir, run_dir / 'gt')):
                key_path = pred_dir / 'keys' / f"{seq_id}.kmtf"
                is_key = np.zeros(gt.n_frames, dtype=np.int64)
                if key_path.exists():
                    is_key[load_key_motions(key_path).indices] = 1
                curves.append(pd.DataFrame({
                    'seed': seed, 'variant': pred_dir.name, 'seq_id': seq_id,
                    'frame': np.arange(gt.n_frames), 'lip_offset_gt': lip_offset_curve(gt, mesh),
                    'lip_offset_pred': lip_offset_curve(pred, mesh), 'is_key': is_key,
                }, columns=LIP_CURVE_COLUMNS))
                if i < heatmap_sequences:
                    heat = error_heatmap_frame(pred, gt)
                    heat.insert(0, 'seq_id', seq_id)
                    heat.insert(0, 'variant', pred_dir.name)
                    heat.insert(0, 'seed', seed)
                    heatmaps.append(heat)
        written['lip_curves'] = write_csv(pd.concat(curves, ignore_index=True), out_dir / 'lip_curves.csv',
                                          config_hash)
        written['error_heatmap'] = write_csv(pd.concat(heatmaps, ignore_index=True),
                                             out_dir / 'error_heatmap.csv', config_hash)

    if not written:
        raise ValidationError(f"{run_dir}: no loss logs or predictions to plot")
    logger.info("plot data written to %s: %s", out_dir, ", ".join(sorted(written)))
    return written
