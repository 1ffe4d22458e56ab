import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from audio.frontend import locate_key_frames, offset_indices, uniform_sample_indices
from data.synth import CorpusSample
from models import ValidationError
from neural.ctc import min_ctc_length

logger = logging.getLogger(__name__)

KEYFRAME_KINDS = ('phoneme', 'uniform', 'baseline-extracted')


@dataclass(frozen=True)
class KeyframeSource:
    """
    关键帧来源：phoneme、uniform:k、phoneme+offset:δ 或 baseline-extracted。

    baseline-extracted 的下标仍按音素边界定位，只是关键运动取自基线模型的预测。
    """
    kind: str = 'phoneme'
    stride: int = 3
    offset: int = 0

    def __post_init__(self):
        if self.kind not in KEYFRAME_KINDS:
            raise ValidationError(f"unknown keyframe source {self.kind!r}")
        if self.stride < 1:
            raise ValidationError(f"uniform stride must be ≥ 1, got {self.stride}")

    @classmethod
    def parse(cls, text: str) -> 'KeyframeSource':
        text = text.strip()
        try:
            if text.startswith('uniform:'):
                return cls('uniform', stride=int(text.split(':', 1)[1]))
            if text.startswith('phoneme+offset:'):
                return cls('phoneme', offset=int(text.split(':', 1)[1]))
        except ValueError as e:
            raise ValidationError(f"malformed keyframe source {text!r}") from e
        return cls(text)

    def __str__(self) -> str:
        if self.kind == 'uniform':
            return f"uniform:{self.stride}"
        if self.offset:
            return f"phoneme+offset:{self.offset:+d}"
        return self.kind

    def indices_for(self, sample: CorpusSample) -> np.ndarray:
        n = sample.n_frames
        if self.kind == 'uniform':
            return uniform_sample_indices(n, self.stride)
        indices = locate_key_frames(sample.alignment, sample.motion.fps, n)
        return offset_indices(indices, self.offset, n) if self.offset else indices


@dataclass
class PreparedSample:
    """
    训练/评估用的样本：张量化的特征与运动、关键帧下标和 CTC 目标。

    ctc_targets 为 None 表示转写在该帧数下无法对齐，训练时跳过文本一致性项。
    """
    sample_id: str
    features: torch.Tensor
    motion: torch.Tensor
    key_indices: np.ndarray
    ctc_targets: Optional[Tuple[int, ...]]
    speaker: Optional[int]

    @property
    def n_frames(self) -> int:
        return int(self.motion.shape[0])


class SampleProcessor:
    """
    样本处理器：把语料样本整理成训练所需的张量，并按批次迭代。

    主要功能包括：
    - 按关键帧来源预先计算每条样本的关键帧下标
    - 检查转写能否被 CTC 对齐，统计不合格的样本数
    - 按 epoch 以固定种子打乱并分批
    """

    def __init__(self, keyframe_source: Optional[KeyframeSource] = None, use_speakers: bool = True,
                 dtype: torch.dtype = torch.float32):
        self.keyframe_source = keyframe_source or KeyframeSource()
        self.use_speakers = use_speakers
        self.dtype = dtype
        self.validation_errors = 0

    def prepare(self, samples: Sequence[CorpusSample], progress_callback=None) -> List[PreparedSample]:
        """
        准备样本列表。

        Args:
            samples: 语料样本
            progress_callback: 可选回调 (current, total)

        Note:
            validation_errors 会在每次调用时重置。
        """
        self.validation_errors = 0
        prepared = []
        for i, sample in enumerate(samples):
            prepared.append(self._prepare_one(sample))
            if progress_callback:
                progress_callback(i + 1, len(samples))
        if self.validation_errors:
            logger.warning("%d of %d samples have transcripts too long for CTC; text loss skipped for them",
                           self.validation_errors, len(samples))
        return prepared

    def _prepare_one(self, sample: CorpusSample) -> PreparedSample:
        tokens = tuple(sample.alignment.transcript_tokens)
        if min_ctc_length(tokens) > sample.n_frames:
            self.validation_errors += 1
            ctc_targets = None
        else:
            ctc_targets = tokens
        return PreparedSample(
            sample_id=sample.sample_id,
            features=torch.as_tensor(np.asarray(sample.audio.features), dtype=self.dtype),
            motion=torch.as_tensor(np.asarray(sample.motion.frames), dtype=self.dtype),
            key_indices=self.keyframe_source.indices_for(sample),
            ctc_targets=ctc_targets,
            speaker=sample.speaker.id if self.use_speakers else None,
        )

    @staticmethod
    def validate_batch(batch: Sequence[PreparedSample]) -> List[PreparedSample]:
        """只保留特征与运动均有限、关键帧非空的样本。"""
        valid = []
        for item in batch:
            if item.key_indices.size == 0:
                continue
            if not (torch.isfinite(item.features).all() and torch.isfinite(item.motion).all()):
                continue
            valid.append(item)
        return valid

    @staticmethod
    def iterate_batches(items: Sequence[PreparedSample], batch_size: int = 1, seed: int = 0,
                        epoch: int = 0, shuffle: bool = True) -> Iterator[List[PreparedSample]]:
        """
        按 epoch 打乱后分批；同一 (seed, epoch) 的顺序固定。
        """
        if batch_size < 1:
            raise ValidationError(f"batch_size must be ≥ 1, got {batch_size}")
        order = np.arange(len(items))
        if shuffle:
            order = np.random.default_rng([seed, epoch]).permutation(len(items))
        for start in range(0, len(order), batch_size):
            batch = SampleProcessor.validate_batch([items[i] for i in order[start:start + batch_size]])
            if batch:
                yield batch
