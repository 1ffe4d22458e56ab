"""
训练流程：LKMA、CMC 与直接回归基线共用同一个训练循环

每个 epoch 以 (seed, epoch) 固定的顺序遍历训练样本，批内梯度取平均后做一次
Adam 更新；epoch 结束后在验证集上求损失，保留验证损失最低的参数。
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd
import torch
from torch import nn

from data.processor import KeyframeSource, PreparedSample, SampleProcessor
from data.synth import Corpus
from models import ValidationError
from neural import OptimizerState, ParamStore, adam_step, collect_grads
from pipeline.baseline import DirectBaseline
from pipeline.cmc import CmcModel, cmc_encode_audio, cmc_forward
from pipeline.components import ModelDims
from pipeline.lkma import LkmaModel, LossWeights, lkma_losses, loss_rec, loss_vel

logger = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ['epoch', 'L_rec', 'L_vel', 'L_lat', 'L_ctc', 'total', 'split']
COMPONENT_NAMES = ('L_rec', 'L_vel', 'L_lat', 'L_ctc')

LossFn = Callable[[PreparedSample], Tuple[torch.Tensor, Dict[str, float]]]


class TrainingDivergedError(RuntimeError):
    """损失出现 NaN/Inf"""

    def __init__(self, epoch: int, sample_id: str, stage: str = ""):
        prefix = f"{stage}: " if stage else ""
        super().__init__(f"{prefix}non-finite loss at epoch {epoch}, sample {sample_id}")
        self.epoch = epoch
        self.sample_id = sample_id


@dataclass
class TrainingConfig:
    """
    优化器与训练循环设置。

    Attributes:
        epochs: 训练轮数
        lr: 学习率
        batch_size: 批大小（批内梯度取平均）
        betas / eps: Adam 参数
        seed: 打乱顺序用的种子
        shuffle: 是否每个 epoch 打乱
    """
    DEFAULT_EPOCHS = 200
    DEFAULT_LR = 1e-4

    epochs: int = DEFAULT_EPOCHS
    lr: float = DEFAULT_LR
    batch_size: int = 1
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be ≥ 1")
        if self.lr < 0 or self.eps <= 0:
            raise ValidationError(f"lr must be ≥ 0 and eps > 0, got lr={self.lr}, eps={self.eps}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ValidationError(f"betas must be two values in [0, 1), got {self.betas}")


@dataclass
class TrainResult:
    model: nn.Module
    loss_log: pd.DataFrame
    best_epoch: int
    best_val: float


def _mean_row(rows: List[Dict[str, float]], epoch: int, split: str) -> Dict:
    row = {'epoch': epoch}
    for name in COMPONENT_NAMES + ('total',):
        row[name] = sum(r[name] for r in rows) / len(rows) if rows else 0.0
    row['split'] = split
    return row


def run_training(model: nn.Module, loss_fn: LossFn, train_items: Sequence[PreparedSample],
                 val_items: Sequence[PreparedSample], config: TrainingConfig,
                 trainable: Optional[Sequence[str]] = None, stage: str = "",
                 progress_callback=None) -> TrainResult:
    """
    通用训练循环。

    Args:
        model: 已初始化的模型
        loss_fn: 单条样本 → (总损失, 分量字典)
        train_items / val_items: 预处理后的样本
        config: 训练设置
        trainable: 参与更新的参数名，默认全部
        stage: 日志与错误消息中使用的阶段名
        progress_callback: 可选回调 (epoch, epochs, train_loss=..., val_loss=...)

    Returns:
        TrainResult，模型参数已恢复为验证损失最低的一轮

    Raises:
        TrainingDivergedError: 任一样本损失非有限
    """
    if not train_items:
        raise ValidationError(f"{stage or 'training'}: no training samples")
    store = ParamStore(model)
    state = OptimizerState(store, lr=config.lr, betas=config.betas, eps=config.eps, trainable=trainable)
    best_snapshot, best_val, best_epoch = store.snapshot(), float('inf'), 0
    log_rows = []

    for epoch in range(1, config.epochs + 1):
        train_rows = []
        for batch in SampleProcessor.iterate_batches(train_items, config.batch_size, config.seed,
                                                     epoch, config.shuffle):
            model.zero_grad(set_to_none=True)
            for item in batch:
                total, parts = loss_fn(item)
                if not torch.isfinite(total):
                    raise TrainingDivergedError(epoch, item.sample_id, stage)
                (total / len(batch)).backward()
                train_rows.append({**parts, 'total': float(total)})
            adam_step(store, collect_grads(store), state)

        val_rows = []
        with torch.no_grad():
            for item in val_items:
                total, parts = loss_fn(item)
                if not torch.isfinite(total):
                    raise TrainingDivergedError(epoch, item.sample_id, stage)
                val_rows.append({**parts, 'total': float(total)})

        train_row = _mean_row(train_rows, epoch, 'train')
        log_rows.append(train_row)
        if val_rows:
            val_row = _mean_row(val_rows, epoch, 'val')
            log_rows.append(val_row)
            current = val_row['total']
        else:
            current = train_row['total']
        if current < best_val:
            best_snapshot, best_val, best_epoch = store.snapshot(), current, epoch

        logger.debug("%s epoch %d: train %.6g, val %.6g", stage, epoch, train_row['total'], current)
        if progress_callback:
            progress_callback(epoch, config.epochs, train_loss=train_row['total'], val_loss=current)

    store.restore(best_snapshot)
    logger.info("%s finished: best epoch %d (val %.6g)", stage, best_epoch, best_val)
    return TrainResult(model=model, loss_log=pd.DataFrame(log_rows, columns=LOSS_LOG_COLUMNS),
                       best_epoch=best_epoch, best_val=best_val)


def _prepare(corpus: Corpus, keyframe_source: KeyframeSource, use_speakers: bool,
             dtype: torch.dtype) -> Tuple[List[PreparedSample], List[PreparedSample]]:
    processor = SampleProcessor(keyframe_source, use_speakers=use_speakers, dtype=dtype)
    train = processor.prepare(corpus.split('train'))
    val = processor.prepare(corpus.split('val')) if 'val' in corpus.splits else []
    return train, val


def _dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def train_lkma(model: LkmaModel, corpus: Corpus, config: TrainingConfig,
               weights: Optional[LossWeights] = None, keyframe_source: Optional[KeyframeSource] = None,
               progress_callback=None) -> TrainResult:
    """LKMA 训练：编码音频 → 取关键帧特征 → 解码 K → 伪完整序列 → 四项损失。"""
    weights = weights or LossWeights()
    train, val = _prepare(corpus, keyframe_source or KeyframeSource(),
                          model.dims.speaker_count > 0, _dtype(model))

    def loss_fn(item: PreparedSample):
        total, parts = lkma_losses(model, item.features, item.motion, item.key_indices,
                                   item.ctc_targets, weights, item.speaker)
        return total, parts.as_floats()

    return run_training(model, loss_fn, train, val, config, stage='train-lkma',
                        progress_callback=progress_callback)


def cmc_losses(model: CmcModel, features: torch.Tensor, gt: torch.Tensor, indices,
               key_motions: torch.Tensor, speaker: Optional[int] = None) -> Tuple[torch.Tensor, Dict[str, float]]:
    """L_CMC = L_rec + L_vel"""
    audio = cmc_encode_audio(model, features, speaker)
    pred = cmc_forward(model, audio, indices, key_motions)
    rec, vel = loss_rec(pred, gt), loss_vel(pred, gt)
    return rec + vel, {'L_rec': float(rec), 'L_vel': float(vel), 'L_lat': 0.0, 'L_ctc': 0.0}


def train_cmc(model: CmcModel, corpus: Corpus, config: TrainingConfig,
              keyframe_source: Optional[KeyframeSource] = None,
              baseline: Optional[DirectBaseline] = None, progress_callback=None) -> TrainResult:
    """
    CMC 训练。

    默认以真值关键运动 K = Ŷ[I] 训练，与 LKMA 互不依赖；给出 baseline 时改为
    取基线预测在 I 处的帧作为 K（集成模式）。
    """
    source = keyframe_source or KeyframeSource()
    train, val = _prepare(corpus, source, model.dims.speaker_count > 0, _dtype(model))
    if source.kind == 'baseline-extracted' and baseline is None:
        raise ValidationError("keyframe source 'baseline-extracted' needs a trained baseline model")

    def keys_for(item: PreparedSample) -> torch.Tensor:
        idx = torch.as_tensor(item.key_indices, dtype=torch.long)
        if baseline is not None:
            with torch.no_grad():
                return baseline(item.features, item.speaker).index_select(0, idx).to(item.motion.dtype)
        return item.motion.index_select(0, idx)

    def loss_fn(item: PreparedSample):
        return cmc_losses(model, item.features, item.motion, item.key_indices, keys_for(item), item.speaker)

    return run_training(model, loss_fn, train, val, config, trainable=model.trainable_names(),
                        stage='train-cmc', progress_callback=progress_callback)


def baseline_losses(model: DirectBaseline, features: torch.Tensor, gt: torch.Tensor,
                    speaker: Optional[int] = None) -> Tuple[torch.Tensor, Dict[str, float]]:
    pred = model(features, speaker)
    rec, vel = loss_rec(pred, gt), loss_vel(pred, gt)
    return rec + vel, {'L_rec': float(rec), 'L_vel': float(vel), 'L_lat': 0.0, 'L_ctc': 0.0}


def train_direct_baseline(corpus: Corpus, config: TrainingConfig, dims: Optional[ModelDims] = None,
                          model_seed: int = 0, model: Optional[DirectBaseline] = None,
                          progress_callback=None) -> TrainResult:
    """直接回归基线：整段序列上的 L_rec + L_vel。"""
    if model is None:
        model = DirectBaseline(dims or ModelDims.for_corpus(corpus))
        ParamStore(model, model_seed).initialize()
    train, val = _prepare(corpus, KeyframeSource(), model.dims.speaker_count > 0, _dtype(model))

    def loss_fn(item: PreparedSample):
        return baseline_losses(model, item.features, item.motion, item.speaker)

    return run_training(model, loss_fn, train, val, config, stage='train-baseline',
                        progress_callback=progress_callback)
