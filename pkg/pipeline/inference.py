"""
端到端推理：特征提取 → LKMA 关键运动 → CMC 补全

长音频先在音素边界处切成片段，逐段推理后按顺序拼接。
"""
import logging
from contextlib import nullcontext
from typing import Callable, ContextManager, Optional

import numpy as np
import torch

from audio.frontend import (AudioSource, featurize, locate_key_frames, offset_indices, segment_long_audio,
                            uniform_sample_indices)
from data.processor import KeyframeSource
from models import KeyMotionSet, MotionSequence, PhonemeAlignment, ValidationError
from pipeline.cmc import CmcModel, cmc_encode_audio, cmc_forward
from pipeline.components import AudioEncoder
from pipeline.lkma import LkmaModel, predict_key_motions

logger = logging.getLogger(__name__)

StageHook = Callable[[str], ContextManager]


def _no_timing(_name: str) -> ContextManager:
    return nullcontext()


def complete_motion(cmc_model: CmcModel, features: torch.Tensor, key: KeyMotionSet,
                    speaker: Optional[int] = None, audio_encoder: Optional[AudioEncoder] = None) -> np.ndarray:
    """
    CMC 推理，返回 N×V×3 数组。

    audio_encoder 给出时（通常是 LKMA 的音频编码器）由它计算 A，
    否则使用 CMC 训练时自带的编码器。
    """
    if key.n_frames != features.shape[0]:
        raise ValidationError(f"key set spans {key.n_frames} frames, audio has {features.shape[0]}")
    dtype = next(cmc_model.parameters()).dtype
    with torch.no_grad():
        if audio_encoder is None:
            audio = cmc_encode_audio(cmc_model, features, speaker)
        else:
            audio = audio_encoder(features.to(next(audio_encoder.parameters()).dtype), speaker).to(dtype)
        frames = cmc_forward(cmc_model, audio, key.indices, torch.as_tensor(np.asarray(key.motions), dtype=dtype))
    return frames.cpu().numpy()


def _clip_indices(alignment: PhonemeAlignment, fps: float, n_frames: int,
                  keyframe_source: KeyframeSource) -> np.ndarray:
    if keyframe_source.kind == 'uniform':
        return uniform_sample_indices(n_frames, keyframe_source.stride)
    if not alignment.phones:
        logger.warning("clip without phones; using its end frames as keys")
        return np.unique(np.array([0, n_frames - 1], dtype=np.int64))
    indices = locate_key_frames(alignment, fps, n_frames)
    return offset_indices(indices, keyframe_source.offset, n_frames) if keyframe_source.offset else indices


def infer_clip(lkma_model: LkmaModel, cmc_model: CmcModel, source: AudioSource, alignment: PhonemeAlignment,
               fps: float = 25.0, speaker: Optional[int] = None, n_frames: Optional[int] = None,
               keyframe_source: Optional[KeyframeSource] = None, stage: StageHook = _no_timing) -> np.ndarray:
    keyframe_source = keyframe_source or KeyframeSource()
    dims = lkma_model.dims
    with stage('featurize'):
        feats = featurize(source, fps, d=dims.feature_dim, n_frames=n_frames)
        features = torch.as_tensor(np.asarray(feats.features), dtype=next(lkma_model.parameters()).dtype)
    with stage('localize'):
        indices = _clip_indices(alignment, fps, feats.n_frames, keyframe_source)
    with stage('lkma'):
        key = predict_key_motions(lkma_model, features, indices, speaker)
    with stage('cmc'):
        return complete_motion(cmc_model, features, key, speaker, audio_encoder=lkma_model.audio_encoder)


def infer_full(lkma_model: LkmaModel, cmc_model: CmcModel, source: AudioSource, alignment: PhonemeAlignment,
               fps: float = 25.0, speaker: Optional[int] = None, max_clip_seconds: Optional[float] = None,
               mesh_ref: str = "mesh", keyframe_source: Optional[KeyframeSource] = None,
               stage: StageHook = _no_timing) -> MotionSequence:
    """
    Y = CMC(A, LKMA(A_k), I)。

    Args:
        lkma_model / cmc_model: 训练好的两个模块
        source: 音频输入
        alignment: 覆盖整段音频的音素对齐
        fps: 输出帧率
        speaker: 说话人编号
        max_clip_seconds: 给出时按该上限切分长音频
        mesh_ref: 输出序列引用的网格名
        keyframe_source: 关键帧来源（消融实验用），默认按音素边界
        stage: 计时钩子，stage(name) 返回上下文管理器

    Returns:
        MotionSequence，帧数为 round(duration × fps)
    """
    if max_clip_seconds is None or alignment.audio_duration <= max_clip_seconds:
        frames = infer_clip(lkma_model, cmc_model, source, alignment, fps, speaker,
                            keyframe_source=keyframe_source, stage=stage)
    else:
        clips = segment_long_audio(source, alignment, max_clip_seconds, fps)
        parts = [infer_clip(lkma_model, cmc_model, clip.source, clip.alignment, fps, speaker,
                            n_frames=clip.n_frames, keyframe_source=keyframe_source, stage=stage)
                 for clip in clips]
        frames = np.concatenate(parts, axis=0)
        logger.info("inferred %d clips, %d frames in total", len(clips), frames.shape[0])
    return MotionSequence(frames=frames.astype(np.float32), fps=fps, mesh_ref=mesh_ref)
