from dataclasses import dataclass
from typing import Tuple

from models.validation import ValidationError
from utils.text_utils import sanitize_label


@dataclass(frozen=True)
class Phone:
    """带时间戳的单个音素（秒）。"""
    label: str
    start: float
    end: float

    def __post_init__(self):
        object.__setattr__(self, 'label', sanitize_label(self.label))
        object.__setattr__(self, 'start', float(self.start))
        object.__setattr__(self, 'end', float(self.end))
        if not self.label:
            raise ValidationError("phone label must be non-empty")
        if not (0.0 <= self.start < self.end):
            raise ValidationError(f"phone {self.label!r} must satisfy 0 ≤ start < end, got [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass(frozen=True)
class PhonemeAlignment:
    """
    强制对齐结果：有序、不重叠的音素时间段，加上转写 token 序列。

    Attributes:
        phones (Tuple[Phone, ...]): 按 start 排序的音素
        transcript_tokens (Tuple[int, ...]): 有限词表上的 token id
        audio_duration (float): 音频总时长（秒）
        text (str): 可选的原始文本

    Raises:
        ValidationError: 音素越界、重叠或乱序时抛出
    """
    phones: Tuple[Phone, ...]
    transcript_tokens: Tuple[int, ...]
    audio_duration: float
    text: str = ""

    def __post_init__(self):
        phones = tuple(p if isinstance(p, Phone) else Phone(*p) for p in self.phones)
        tokens = tuple(int(t) for t in self.transcript_tokens)
        duration = float(self.audio_duration)
        if not duration > 0:
            raise ValidationError(f"audio_duration must be positive, got {duration}")
        if any(t < 0 for t in tokens):
            raise ValidationError("transcript tokens must be non-negative ids")

        # 允许 1e-9 的浮点误差，以兼容切分后重新计时的片段
        for i, p in enumerate(phones):
            if p.end > duration + 1e-9:
                raise ValidationError(f"phone {i} ({p.label!r}) ends at {p.end} after audio end {duration}")
            if i and p.start < phones[i - 1].end - 1e-9:
                raise ValidationError(f"phone {i} ({p.label!r}) overlaps or precedes phone {i - 1}")

        object.__setattr__(self, 'phones', phones)
        object.__setattr__(self, 'transcript_tokens', tokens)
        object.__setattr__(self, 'audio_duration', duration)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(p.label for p in self.phones)

    def boundaries(self) -> Tuple[float, ...]:
        """所有音素的起止时间（去重、升序）。"""
        return tuple(sorted({t for p in self.phones for t in (p.start, p.end)}))
