"""
合成语料生成

每条序列由随机音素串驱动：运动在每个音素的时间中点达到该音素的视素关键姿态，
相邻中点之间用 smoothstep 缓动过渡（起止为静止脸）；音频特征为每个音素的固定
签名向量加高斯噪声。音素边界因此正好落在唇部运动曲线的拐点附近。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from audio.frontend import AudioSource, featurize, locate_key_frames
from models import (AudioFeatureSequence, MeshSpec, MotionSequence, Phone, PhonemeAlignment,
                    SpeakerId, ValidationError)
from utils.numeric import child_seeds, frame_count

logger = logging.getLogger(__name__)

DEFAULT_VOCABULARY = ("AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "EH",
                      "ER", "F", "G", "IY", "K", "M", "P", "S", "T", "UW")
# 音频签名在内部以 100 fps 生成，再重采样到目标帧率
INTERNAL_FEATURE_FPS = 100.0
MIN_MESH_VERTICES = 30
SPLIT_NAMES = ('train', 'val', 'test')


@dataclass
class CorpusConfig:
    """
    合成语料配置。

    Attributes:
        n_sequences: 序列条数
        splits: (train, val, test) 比例，和为 1
        fps: 帧率
        vertex_count: 网格顶点数 V
        feature_dim: 音频特征维度 d
        vocabulary_size: 音素表大小 P（不超过内置 20 个标签时使用内置标签）
        min_phone_seconds / max_phone_seconds: 音素时长均匀分布区间
        min_phones / max_phones: 每条序列的音素个数区间
        noise: 音频特征噪声标准差 σ
        speaker_count: 说话人数
        seed: 随机种子
        mesh_name: 网格名称
    """
    DEFAULT_N_SEQUENCES = 80
    DEFAULT_SPLITS = (0.8, 0.1, 0.1)

    n_sequences: int = DEFAULT_N_SEQUENCES
    splits: Tuple[float, float, float] = DEFAULT_SPLITS
    fps: float = 25.0
    vertex_count: int = 200
    feature_dim: int = 64
    vocabulary_size: int = 20
    min_phone_seconds: float = 0.06
    max_phone_seconds: float = 0.14
    min_phones: int = 30
    max_phones: int = 50
    noise: float = 0.1
    speaker_count: int = 4
    seed: int = 0
    mesh_name: str = "synthface"

    def __post_init__(self):
        self.splits = tuple(float(s) for s in self.splits)
        positive = {
            'n_sequences': self.n_sequences, 'fps': self.fps, 'vertex_count': self.vertex_count,
            'feature_dim': self.feature_dim, 'vocabulary_size': self.vocabulary_size,
            'min_phone_seconds': self.min_phone_seconds, 'max_phone_seconds': self.max_phone_seconds,
            'min_phones': self.min_phones, 'max_phones': self.max_phones,
            'speaker_count': self.speaker_count,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValidationError(f"corpus config {name} must be positive, got {value}")
        if self.noise < 0:
            raise ValidationError(f"corpus config noise must be non-negative, got {self.noise}")
        if len(self.splits) != 3 or any(s < 0 for s in self.splits) or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValidationError(f"splits must be three non-negative fractions summing to 1, got {self.splits}")
        if self.min_phone_seconds > self.max_phone_seconds or self.min_phones > self.max_phones:
            raise ValidationError("corpus config minimums must not exceed maximums")
        if self.vertex_count < MIN_MESH_VERTICES:
            raise ValidationError(f"vertex_count must be ≥ {MIN_MESH_VERTICES}, got {self.vertex_count}")

    def split_sizes(self, n: Optional[int] = None) -> Tuple[int, int, int]:
        n = self.n_sequences if n is None else n
        train = int(round(n * self.splits[0]))
        val = min(int(round(n * self.splits[1])), n - train)
        return train, val, n - train - val


@dataclass(frozen=True, eq=False)
class VisemeTable:
    """每个音素的关键姿态（P×V×3，mm）与音频签名（P×d）。"""
    vocabulary: Tuple[str, ...]
    keyposes: np.ndarray
    signatures: np.ndarray
    seed: int = 0

    def __post_init__(self):
        vocabulary = tuple(self.vocabulary)
        if len(set(vocabulary)) != len(vocabulary) or not vocabulary:
            raise ValidationError("viseme vocabulary must be non-empty and unique")
        keyposes = np.asarray(self.keyposes, dtype=np.float32)
        signatures = np.asarray(self.signatures, dtype=np.float32)
        if keyposes.ndim != 3 or keyposes.shape[0] != len(vocabulary) or keyposes.shape[2] != 3:
            raise ValidationError(f"keyposes must be P×V×3 with P={len(vocabulary)}, got {keyposes.shape}")
        if signatures.ndim != 2 or signatures.shape[0] != len(vocabulary):
            raise ValidationError(f"signatures must be P×d with P={len(vocabulary)}, got {signatures.shape}")
        keyposes.setflags(write=False)
        signatures.setflags(write=False)
        object.__setattr__(self, 'vocabulary', vocabulary)
        object.__setattr__(self, 'keyposes', keyposes)
        object.__setattr__(self, 'signatures', signatures)

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    def token(self, label: str) -> int:
        try:
            return self.vocabulary.index(label)
        except ValueError:
            raise ValidationError(f"phone label {label!r} is not in the viseme vocabulary") from None


@dataclass(frozen=True, eq=False)
class SpeakerStyle:
    """说话人风格：标量幅度 × 固定的逐顶点权重。"""
    amplitude: float
    vertex_weights: np.ndarray

    def apply(self, frames: np.ndarray) -> np.ndarray:
        return frames * (self.amplitude * self.vertex_weights)[None, :, None]


@dataclass(frozen=True, eq=False)
class CorpusSample:
    sample_id: str
    audio: AudioFeatureSequence
    motion: MotionSequence
    alignment: PhonemeAlignment
    speaker: SpeakerId

    def __post_init__(self):
        self.audio.check_pair(self.motion)

    @property
    def n_frames(self) -> int:
        return self.motion.n_frames

    def key_indices(self) -> np.ndarray:
        return locate_key_frames(self.alignment, self.motion.fps, self.n_frames)


@dataclass
class Corpus:
    """
    语料：样本列表 + 网格 + 视素表 + 划分。

    Attributes:
        samples: 全部样本（按 sample_id 排序）
        mesh: 模板网格
        vocabulary: 音素标签表，token id 即其下标
        visemes: 生成时使用的视素表，从外部导入的语料可以为空
        splits: 划分名 → sample_id 列表
    """
    samples: List[CorpusSample]
    mesh: MeshSpec
    vocabulary: Tuple[str, ...]
    visemes: Optional[VisemeTable] = None
    splits: Dict[str, List[str]] = field(default_factory=dict)
    config: Optional[CorpusConfig] = None

    def __post_init__(self):
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValidationError("corpus sample ids must be unique")
        vocab = set(self.vocabulary)
        for s in self.samples:
            s.motion.check_mesh(self.mesh)
            unknown = [label for label in s.alignment.labels if label not in vocab]
            if unknown:
                raise ValidationError(f"sample {s.sample_id}: phone labels {unknown} not in vocabulary")
            if any(t >= len(self.vocabulary) for t in s.alignment.transcript_tokens):
                raise ValidationError(f"sample {s.sample_id}: transcript token out of vocabulary range")
        known = set(ids)
        for name, members in self.splits.items():
            missing = [m for m in members if m not in known]
            if missing:
                raise ValidationError(f"split {name} references unknown samples {missing[:3]}")
        self._by_id = {s.sample_id: s for s in self.samples}

    def __len__(self) -> int:
        return len(self.samples)

    def get(self, sample_id: str) -> CorpusSample:
        if sample_id not in self._by_id:
            raise ValidationError(f"unknown sample {sample_id}")
        return self._by_id[sample_id]

    def split(self, name: str) -> List[CorpusSample]:
        if name not in self.splits:
            raise ValidationError(f"corpus has no split named {name!r}")
        return [self._by_id[i] for i in self.splits[name]]

    @property
    def fps(self) -> float:
        return self.samples[0].motion.fps if self.samples else 25.0

    @property
    def feature_dim(self) -> int:
        return self.samples[0].audio.d if self.samples else 0

    @property
    def speaker_count(self) -> int:
        return 1 + max((s.speaker.id for s in self.samples), default=0)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        if (self.mesh != other.mesh or self.vocabulary != other.vocabulary
                or self.splits != other.splits or len(self) != len(other)):
            return False
        for a, b in zip(self.samples, other.samples):
            if (a.sample_id != b.sample_id or a.speaker != b.speaker or a.audio != b.audio
                    or a.motion != b.motion or a.alignment != b.alignment):
                return False
        return True

    __hash__ = None


def build_mesh_spec(vertex_count: int, seed: int = 0, name: str = "synthface") -> MeshSpec:
    """
    在椭球面上采样模板网格（mm），按 z 升序排列。

    最低的 25% 顶点为唇部区域，最高的 25% 为上半脸区域。
    """
    if vertex_count < MIN_MESH_VERTICES:
        raise ValidationError(f"a mesh needs at least {MIN_MESH_VERTICES} vertices, got {vertex_count}")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(vertex_count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    template = directions * np.array([70.0, 90.0, 110.0])
    template = template[np.argsort(template[:, 2], kind='stable')]
    quarter = vertex_count // 4
    return MeshSpec(name=name, template_positions=template.astype(np.float32),
                    lip_vertices=np.arange(quarter),
                    upper_face_vertices=np.arange(vertex_count - quarter, vertex_count))


def build_viseme_table(mesh: MeshSpec, vocabulary_size: int, feature_dim: int, seed: int = 0) -> VisemeTable:
    """唇部顶点的关键姿态幅度最大（2–4 mm），上半脸最小（< 0.3 mm）。"""
    if vocabulary_size <= len(DEFAULT_VOCABULARY):
        vocabulary = DEFAULT_VOCABULARY[:vocabulary_size]
    else:
        vocabulary = DEFAULT_VOCABULARY + tuple(f"PH{i}" for i in range(len(DEFAULT_VOCABULARY), vocabulary_size))
    rng = np.random.default_rng(seed)
    V = mesh.vertex_count
    magnitude = rng.uniform(0.2, 1.0, size=(vocabulary_size, V))
    magnitude[:, mesh.lip_vertices] = rng.uniform(2.0, 4.0, size=(vocabulary_size, mesh.lip_vertices.size))
    magnitude[:, mesh.upper_face_vertices] = rng.uniform(
        0.0, 0.3, size=(vocabulary_size, mesh.upper_face_vertices.size))
    directions = rng.normal(size=(vocabulary_size, V, 3))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    keyposes = directions * magnitude[:, :, None]
    signatures = rng.normal(size=(vocabulary_size, feature_dim))
    return VisemeTable(vocabulary=vocabulary, keyposes=keyposes, signatures=signatures, seed=seed)


def build_speaker_styles(speaker_count: int, vertex_count: int, seed: int = 0) -> List[SpeakerStyle]:
    rng = np.random.default_rng([seed, 1])
    return [SpeakerStyle(amplitude=float(rng.uniform(0.7, 1.3)),
                         vertex_weights=rng.uniform(0.8, 1.2, size=vertex_count))
            for _ in range(speaker_count)]


def smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def ease_between_anchors(times: np.ndarray, anchor_times: np.ndarray, anchor_poses: np.ndarray) -> np.ndarray:
    """在锚点之间做 smoothstep 插值，anchor_times 严格递增。返回 len(times)×V×3。"""
    seg = np.clip(np.searchsorted(anchor_times, times, side='right') - 1, 0, len(anchor_times) - 2)
    t0, t1 = anchor_times[seg], anchor_times[seg + 1]
    s = smoothstep((times - t0) / (t1 - t0))[:, None, None]
    return (1.0 - s) * anchor_poses[seg] + s * anchor_poses[seg + 1]


def generate_sequence(config: CorpusConfig, mesh: MeshSpec, visemes: VisemeTable, speaker: SpeakerId,
                      seed: int, style: Optional[SpeakerStyle] = None, sample_id: str = "seq",
                      phone_tokens: Optional[Sequence[int]] = None,
                      phone_durations: Optional[Sequence[float]] = None) -> CorpusSample:
    """
    生成一条合成样本。

    Args:
        config: 语料配置
        mesh: 模板网格
        visemes: 视素表
        speaker: 说话人
        seed: 本条序列的随机种子
        style: 说话人风格，默认由 config.seed 与说话人编号派生
        sample_id: 样本编号
        phone_tokens / phone_durations: 可选的固定音素串与时长（长序列测试使用）

    Returns:
        CorpusSample
    """
    rng = np.random.default_rng(seed)
    if style is None:
        style = build_speaker_styles(speaker.id + 1, mesh.vertex_count, config.seed)[speaker.id]

    if phone_tokens is None:
        count = int(rng.integers(config.min_phones, config.max_phones + 1))
        tokens = rng.integers(0, visemes.size, size=count)
    else:
        tokens = np.asarray(phone_tokens, dtype=np.int64)
    if phone_durations is None:
        durations = rng.uniform(config.min_phone_seconds, config.max_phone_seconds, size=tokens.size)
    else:
        durations = np.asarray(phone_durations, dtype=np.float64)
    if durations.size != tokens.size or tokens.size == 0:
        raise ValidationError("phone tokens and durations must be non-empty and of equal length")

    edges = np.concatenate([[0.0], np.cumsum(durations)])
    total = float(edges[-1])
    fps = float(config.fps)
    n = frame_count(total, fps)

    # 锚点：静止 → 各音素中点的关键姿态 → 静止
    mids = 0.5 * (edges[:-1] + edges[1:])
    anchor_times = np.concatenate([[0.0], mids, [total]])
    rest = np.zeros((1, mesh.vertex_count, 3))
    anchor_poses = np.concatenate([rest, visemes.keyposes[tokens].astype(np.float64), rest])
    frames = style.apply(ease_between_anchors(np.arange(n) / fps, anchor_times, anchor_poses))
    motion = MotionSequence(frames=frames.astype(np.float32), fps=fps, mesh_ref=mesh.name)

    n_internal = frame_count(total, INTERNAL_FEATURE_FPS)
    internal_t = np.arange(n_internal) / INTERNAL_FEATURE_FPS
    phone_of = np.clip(np.searchsorted(edges, internal_t, side='right') - 1, 0, tokens.size - 1)
    raw = visemes.signatures[tokens[phone_of]].astype(np.float64)
    if config.noise > 0:
        raw = raw + rng.normal(scale=config.noise, size=raw.shape)
    internal = AudioFeatureSequence(features=raw.astype(np.float32), fps=INTERNAL_FEATURE_FPS)
    audio = featurize(AudioSource.from_features(internal), fps, n_frames=n)

    labels = [visemes.vocabulary[t] for t in tokens]
    phones = tuple(Phone(label, float(a), float(b)) for label, a, b in zip(labels, edges[:-1], edges[1:]))
    alignment = PhonemeAlignment(phones=phones, transcript_tokens=tuple(int(t) for t in tokens),
                                 audio_duration=total, text=" ".join(labels))
    return CorpusSample(sample_id=sample_id, audio=audio, motion=motion, alignment=alignment, speaker=speaker)


def generate_corpus(config: CorpusConfig, progress_callback=None) -> Corpus:
    """
    按配置生成整套语料并划分 train/val/test。

    说话人按序号轮转分配，划分按序号连续切分，因此每个划分内各说话人条数相差不超过 1。

    Args:
        config: 语料配置
        progress_callback: 可选回调 (current, total)
    """
    mesh = build_mesh_spec(config.vertex_count, config.seed, config.mesh_name)
    visemes = build_viseme_table(mesh, config.vocabulary_size, config.feature_dim, config.seed)
    styles = build_speaker_styles(config.speaker_count, mesh.vertex_count, config.seed)
    seeds = child_seeds(config.seed, config.n_sequences)

    samples = []
    for i, seed in enumerate(seeds):
        speaker = SpeakerId(i % config.speaker_count)
        samples.append(generate_sequence(config, mesh, visemes, speaker, seed, styles[speaker.id],
                                         sample_id=f"seq_{i:04d}"))
        if progress_callback:
            progress_callback(i + 1, config.n_sequences)

    n_train, n_val, _ = config.split_sizes()
    ids = [s.sample_id for s in samples]
    splits = {'train': ids[:n_train], 'val': ids[n_train:n_train + n_val], 'test': ids[n_train + n_val:]}
    logger.info("generated %d sequences (%s)", len(samples),
                ", ".join(f"{k}={len(v)}" for k, v in splits.items()))
    return Corpus(samples=samples, mesh=mesh, vocabulary=visemes.vocabulary, visemes=visemes,
                  splits=splits, config=config)
