"""
对齐文件（AlignmentFile JSON）的读写，以及强制对齐器 TextGrid 输出的转换

JSON 格式：
    {"text": str, "tokens": [int], "phones": [{"label": str, "start": s, "end": s}], "duration": s}
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

import tgt

from models import Phone, PhonemeAlignment, ValidationError
from utils.text_utils import dump_json, load_json, sanitize_label, sanitize_text

logger = logging.getLogger(__name__)

SILENCE_LABELS = frozenset({"", "sil", "sp", "spn"})
DEFAULT_PHONE_TIER = "phones"


def alignment_from_dict(doc: Mapping) -> PhonemeAlignment:
    """把 AlignmentFile 文档解析为 PhonemeAlignment，字段缺失或类型错误都会抛出 ValidationError。"""
    missing = [k for k in ('tokens', 'phones', 'duration') if k not in doc]
    if missing:
        raise ValidationError(f"alignment file is missing fields: {', '.join(missing)}")
    try:
        phones = tuple(Phone(p['label'], p['start'], p['end']) for p in doc['phones'])
        tokens = tuple(int(t) for t in doc['tokens'])
        duration = float(doc['duration'])
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"malformed alignment file: {e}") from e
    return PhonemeAlignment(phones=phones, transcript_tokens=tokens, audio_duration=duration,
                            text=sanitize_text(doc.get('text', '')))


def alignment_to_dict(alignment: PhonemeAlignment) -> Dict:
    return {
        'text': alignment.text,
        'tokens': list(alignment.transcript_tokens),
        'phones': [{'label': p.label, 'start': p.start, 'end': p.end} for p in alignment.phones],
        'duration': alignment.audio_duration,
    }


def load_alignment(path: Union[str, Path]) -> PhonemeAlignment:
    return alignment_from_dict(load_json(path))


def save_alignment(alignment: PhonemeAlignment, path: Union[str, Path]) -> None:
    dump_json(alignment_to_dict(alignment), path)


def textgrid_to_alignment(path: Union[str, Path], vocabulary: Mapping[str, int],
                          tier_name: str = DEFAULT_PHONE_TIER, text: str = "",
                          silence_labels: Iterable[str] = SILENCE_LABELS,
                          duration: Optional[float] = None) -> PhonemeAlignment:
    """
    读取强制对齐器输出的 TextGrid，转换为 PhonemeAlignment。

    静音区间（sil/sp/spn/空标签）被丢弃；其余音素按 vocabulary 映射为 token，
    token 与保留下来的音素一一对应。

    Args:
        path: TextGrid 文件路径
        vocabulary: 音素标签 → token id
        tier_name: 音素层名称
        text: 原始转写文本
        silence_labels: 视为静音的标签
        duration: 音频时长，默认取 TextGrid 的 end_time

    Raises:
        ValidationError: 音素层不存在或出现词表外的标签
    """
    textgrid = tgt.io.read_textgrid(str(path))
    try:
        tier = textgrid.get_tier_by_name(tier_name)
    except ValueError as e:
        raise ValidationError(f"{path}: no tier named {tier_name!r}") from e

    silence = {s.lower() for s in silence_labels}
    phones, tokens, dropped = [], [], 0
    for interval in tier.intervals:
        label = sanitize_label(interval.text)
        if label.lower() in silence:
            dropped += 1
            continue
        if label not in vocabulary:
            raise ValidationError(f"{path}: phone label {label!r} is not in the vocabulary")
        phones.append(Phone(label, float(interval.start_time), float(interval.end_time)))
        tokens.append(int(vocabulary[label]))

    total = float(textgrid.end_time) if duration is None else float(duration)
    logger.info("%s: %d phones kept, %d silence intervals dropped", path, len(phones), dropped)
    return PhonemeAlignment(phones=tuple(phones), transcript_tokens=tuple(tokens),
                            audio_duration=total, text=sanitize_text(text))
