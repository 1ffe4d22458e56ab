"""
音频前端：特征提取、关键帧定位、采样与长音频切分

波形输入使用 d 个线性频带的对数能量作为特征（逐帧 DFT），预计算特征输入
沿时间轴线性重采样到目标帧率。帧号统一按 round-half-up(t × fps) 计算。
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.io import wavfile

from models import AudioFeatureSequence, Phone, PhonemeAlignment, ValidationError
from models.validation import as_float_array, as_index_array
from utils.numeric import frame_count, seconds_to_frame

logger = logging.getLogger(__name__)

# 对数能量的下限常数，静音帧的特征恰好是 log(ENERGY_FLOOR)
ENERGY_FLOOR = 1e-10
DEFAULT_FPS = 25.0


class SegmentationError(ValidationError):
    """长音频无法在音素边界处切分"""
    pass


@dataclass(frozen=True, eq=False)
class AudioSource:
    """
    音频输入 x：原始波形（samples + sample_rate）或预计算特征，二者取其一。
    """
    samples: Optional[np.ndarray] = None
    sample_rate: Optional[int] = None
    precomputed: Optional[AudioFeatureSequence] = None

    def __post_init__(self):
        if (self.samples is None) == (self.precomputed is None):
            raise ValidationError("AudioSource needs exactly one of samples or precomputed features")
        if self.samples is not None:
            samples = as_float_array(np.asarray(self.samples, dtype=np.float64).reshape(-1), "samples", 1)
            if samples.size == 0:
                raise ValidationError("waveform is empty")
            if self.sample_rate is None or int(self.sample_rate) <= 0:
                raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
            object.__setattr__(self, 'samples', samples)
            object.__setattr__(self, 'sample_rate', int(self.sample_rate))

    @classmethod
    def from_waveform(cls, samples, sample_rate: int) -> 'AudioSource':
        return cls(samples=samples, sample_rate=sample_rate)

    @classmethod
    def from_features(cls, features: AudioFeatureSequence) -> 'AudioSource':
        return cls(precomputed=features)

    @classmethod
    def from_wav(cls, path) -> 'AudioSource':
        """读取 WAV 文件；整型 PCM 缩放到 [-1, 1]，多声道取平均。"""
        sample_rate, data = wavfile.read(str(path))
        data = np.asarray(data)
        if np.issubdtype(data.dtype, np.integer):
            data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
        if data.ndim == 2:
            data = data.mean(axis=1)
        return cls(samples=data, sample_rate=int(sample_rate))

    @property
    def is_waveform(self) -> bool:
        return self.samples is not None

    @property
    def duration(self) -> float:
        if self.is_waveform:
            return self.samples.size / self.sample_rate
        return self.precomputed.duration


@dataclass(frozen=True, eq=False)
class AudioClip:
    """长音频切分出的片段，start_frame/n_frames 以目标帧率计。"""
    source: AudioSource
    alignment: PhonemeAlignment
    start_frame: int
    n_frames: int


def _band_energies(frames: np.ndarray, sample_rate: int, d: int, max_freq: float) -> np.ndarray:
    """每帧 d 个线性频带的 DFT 能量（frames: N×win，已加窗）。"""
    win = frames.shape[1]
    power = np.abs(np.fft.rfft(frames, n=win, axis=1)) ** 2
    freqs = np.fft.rfftfreq(win, d=1.0 / sample_rate)
    edges = np.linspace(0.0, max_freq, d + 1)
    band = np.searchsorted(edges, freqs, side='right') - 1
    # 恰好落在 max_freq 上的频点归入最后一个频带
    band[np.isclose(freqs, max_freq)] = d - 1
    energies = np.zeros((frames.shape[0], d), dtype=np.float64)
    valid = (band >= 0) & (band < d)
    for b in range(d):
        cols = valid & (band == b)
        if cols.any():
            energies[:, b] = power[:, cols].sum(axis=1)
    empty = d - len(set(band[valid].tolist()))
    if empty:
        logger.warning("%d of %d filterbank bands contain no DFT bin (window of %d samples)", empty, d, win)
    return energies


def _featurize_waveform(source: AudioSource, fps: float, d: int, n: int,
                        max_freq: Optional[float]) -> np.ndarray:
    sr = source.sample_rate
    nyquist = sr / 2.0
    max_freq = nyquist if max_freq is None else float(max_freq)
    if not 0 < max_freq <= nyquist:
        raise ValidationError(
            f"highest filterbank edge {max_freq} Hz needs sample_rate ≥ {2 * max_freq}, got {sr}")

    hop = sr / fps
    win = max(2, int(round(2 * hop)))
    # 第 t 帧窗口中心位于 (t + 0.5) × hop，宽两帧，越界处补零
    starts = np.round((np.arange(n) + 0.5) * hop - win / 2.0).astype(np.int64)
    padded = np.concatenate([np.zeros(win), source.samples, np.zeros(win)])
    idx = np.clip(starts[:, None] + np.arange(win)[None, :] + win, 0, padded.size - 1)
    frames = padded[idx] * np.hanning(win)[None, :]
    return np.log(_band_energies(frames, sr, d, max_freq) + ENERGY_FLOOR)


def _resample(features: AudioFeatureSequence, fps: float, n: int) -> np.ndarray:
    src = features.features.astype(np.float64)
    src_t = np.arange(features.n_frames) / features.fps
    dst_t = np.arange(n) / fps
    return np.stack([np.interp(dst_t, src_t, src[:, j]) for j in range(features.d)], axis=1)


def featurize(source: AudioSource, target_fps: float = DEFAULT_FPS, d: Optional[int] = None,
              n_frames: Optional[int] = None, max_freq: Optional[float] = None) -> AudioFeatureSequence:
    """
    生成与视频帧率对齐的 N×d 音频特征 A。

    Args:
        source: 音频输入
        target_fps: 目标帧率
        d: 特征维度；波形输入必填，预计算输入若给出则必须与原维度一致
        n_frames: 强制输出帧数（片段推理时使用），默认 round(duration × fps)
        max_freq: 最高频带上沿，默认 Nyquist 频率

    Returns:
        AudioFeatureSequence
    """
    if not target_fps > 0:
        raise ValidationError(f"target fps must be positive, got {target_fps}")
    n = frame_count(source.duration, target_fps) if n_frames is None else int(n_frames)
    if n < 1:
        raise ValidationError(f"audio of {source.duration:.4f}s yields no frames at {target_fps} fps")

    if source.is_waveform:
        if d is None or d < 1:
            raise ValidationError(f"waveform featurization needs a positive band count d, got {d}")
        return AudioFeatureSequence(features=_featurize_waveform(source, target_fps, d, n, max_freq),
                                    fps=target_fps)

    features = source.precomputed
    if d is not None and d != features.d:
        raise ValidationError(f"precomputed features have d={features.d}, requested d={d}")
    if features.fps == float(target_fps) and n == features.n_frames:
        return features
    resampled = _resample(features, target_fps, n).astype(features.features.dtype)
    return AudioFeatureSequence(features=resampled, fps=target_fps)


def locate_key_frames(alignment: PhonemeAlignment, fps: float, n_frames: int) -> np.ndarray:
    """
    音素边界 → 关键帧下标 I。

    每个音素的起止时间各映射到一帧，截断到 [0, N-1]，去重并排序；
    相邻音素共享的边界只出现一次。
    """
    if not alignment.phones:
        raise ValidationError("empty alignment")
    if n_frames < 1:
        raise ValidationError(f"n_frames must be ≥ 1, got {n_frames}")
    raw = [seconds_to_frame(t, fps) for p in alignment.phones for t in (p.start, p.end)]
    clipped = np.clip(np.asarray(raw, dtype=np.int64), 0, n_frames - 1)
    if np.any(clipped != raw):
        logger.debug("clamped %d boundary frames into [0, %d]", int(np.sum(clipped != raw)), n_frames - 1)
    return np.unique(clipped)


def uniform_sample_indices(n_frames: int, stride: int) -> np.ndarray:
    """{0, s, 2s, ...} ∩ [0, N)，并始终包含最后一帧 N-1。"""
    if stride < 1:
        raise ValidationError(f"stride must be ≥ 1, got {stride}")
    if n_frames < 1:
        raise ValidationError(f"n_frames must be ≥ 1, got {n_frames}")
    return np.unique(np.append(np.arange(0, n_frames, stride, dtype=np.int64), n_frames - 1))


def offset_indices(indices: Sequence[int], delta: int, n_frames: int) -> np.ndarray:
    """整体平移 delta 帧，截断到 [0, N-1] 后去重。"""
    idx = as_index_array(indices, "indices")
    return np.unique(np.clip(idx + int(delta), 0, n_frames - 1))


def _slice_source(source: AudioSource, start: float, end: float) -> AudioSource:
    if source.is_waveform:
        sr = source.sample_rate
        a, b = seconds_to_frame(start, sr), seconds_to_frame(end, sr)
        return AudioSource.from_waveform(source.samples[a:max(b, a + 1)], sr)
    feats = source.precomputed
    a = min(seconds_to_frame(start, feats.fps), feats.n_frames - 1)
    b = max(min(seconds_to_frame(end, feats.fps), feats.n_frames), a + 1)
    return AudioSource.from_features(AudioFeatureSequence(features=feats.features[a:b], fps=feats.fps))


def _clip_alignment(alignment: PhonemeAlignment, start: float, end: float) -> PhonemeAlignment:
    phones = [p for p in alignment.phones if p.start >= start - 1e-9 and p.end <= end + 1e-9]
    # token 与音素一一对应时随音素切分，否则片段不携带转写
    if len(alignment.transcript_tokens) == len(alignment.phones):
        kept = {id(p) for p in phones}
        tokens = tuple(t for p, t in zip(alignment.phones, alignment.transcript_tokens) if id(p) in kept)
    else:
        tokens = ()
    retimed = tuple(Phone(p.label, max(p.start - start, 0.0), min(p.end - start, end - start))
                    for p in phones)
    return PhonemeAlignment(phones=retimed, transcript_tokens=tokens, audio_duration=end - start)


def segment_long_audio(source: AudioSource, alignment: PhonemeAlignment, max_clip_seconds: float,
                       fps: float = DEFAULT_FPS) -> List[AudioClip]:
    """
    在音素边界处把长音频切成不超过 max_clip_seconds 的片段。

    贪心地选取不超过上限的最远边界作为切点，片段的对齐重新从 0 计时。
    片段帧数取切点帧号之差，总帧数严格等于 round(duration × fps)。

    Raises:
        SegmentationError: 存在比上限更长的音素，或找不到可用切点
    """
    if not max_clip_seconds > 0:
        raise SegmentationError(f"max_clip_seconds must be positive, got {max_clip_seconds}")
    longest = max(alignment.phones, key=lambda p: p.duration, default=None)
    if longest is not None and longest.duration > max_clip_seconds:
        raise SegmentationError(
            f"phone {longest.label!r} lasts {longest.duration:.3f}s, longer than max clip {max_clip_seconds}s")

    duration = alignment.audio_duration
    total = frame_count(duration, fps)
    if duration <= max_clip_seconds:
        return [AudioClip(source, alignment, 0, total)]

    boundaries = alignment.boundaries()
    cuts = [0.0]
    while duration - cuts[-1] > max_clip_seconds + 1e-9:
        start = cuts[-1]
        candidates = [b for b in boundaries if start + 1e-9 < b <= start + max_clip_seconds + 1e-9]
        if not candidates:
            raise SegmentationError(f"no phone boundary within {max_clip_seconds}s after {start:.3f}s")
        cuts.append(max(candidates))
    cuts.append(duration)

    clips = []
    for start, end in zip(cuts, cuts[1:]):
        first = seconds_to_frame(start, fps)
        last = total if end == duration else seconds_to_frame(end, fps)
        if last <= first:
            raise SegmentationError(f"clip [{start:.3f}s, {end:.3f}s] spans no frame at {fps} fps")
        clips.append(AudioClip(_slice_source(source, start, end), _clip_alignment(alignment, start, end),
                               first, last - first))
    logger.info("segmented %.2fs audio into %d clips", duration, len(clips))
    return clips
