"""
实验配置：JSON 文档映射到各个配置 dataclass

文档结构（所有键可省略，省略时取默认值）：
    {
      "corpus":   {CorpusConfig 字段},
      "model":    {ModelSection 字段},
      "weights":  {"rec", "vel", "lat", "ctc"},
      "training": {TrainingConfig 字段},
      "keyframe_source": "phoneme" | "uniform:k" | "phoneme+offset:δ" | "baseline-extracted",
      "audio_guidance": true,
      "cmc_audio_encoder": "joint" | "frozen-lkma",
      "seeds": [0, 1, 2],
      ...
    }
未知键一律报错。环境变量 KMSYNTH_SEED 把 seeds 覆盖为单个种子。
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Union

from data.processor import KeyframeSource
from data.synth import CorpusConfig
from models import ValidationError
from pipeline.cmc import CMC_AUDIO_ENCODERS
from pipeline.components import ModelDims
from pipeline.lkma import LossWeights
from pipeline.training import TrainingConfig
from utils.text_utils import ensure_json_safe, load_json

SEED_ENV = 'KMSYNTH_SEED'
KEY_DECODERS = ('learned', 'baseline-extracted')
# 不影响结果的字段不参与 config_hash
HASH_EXCLUDED = ('output_dir',)


@dataclass
class ModelSection:
    """与语料无关的模型结构设置，V/词表/唇部顶点在运行时由语料补齐。"""
    d: int = ModelDims.DEFAULT_D
    f: int = ModelDims.DEFAULT_F
    depth: int = 2
    faithful_depth: bool = False
    decoder_memory: str = 'keys'
    encoder_heads: int = 4
    decoder_heads: int = 4
    flow_heads: int = 8
    pe_dim: int = 16
    conv_width: int = 3
    speaker_conditioning: bool = True

    def dims_for(self, corpus) -> ModelDims:
        overrides = {k: v for k, v in asdict(self).items() if k != 'speaker_conditioning'}
        overrides['speaker_count'] = corpus.speaker_count if self.speaker_conditioning else 0
        return ModelDims.for_corpus(corpus, **overrides)


@dataclass
class ExperimentConfig:
    """
    一次实验（或消融套件的基准配置）。

    Attributes:
        corpus: 合成语料配置；corpus_dir 给出时改为读取已有语料
        model: 模型结构
        weights: LKMA 损失权重
        training: 优化设置（三个模型共用）
        keyframe_source: 关键帧来源
        audio_guidance: CMC 是否使用音频引导
        key_decoder: learned（LKMA）或 baseline-extracted（从基线预测中取关键运动）
        cmc_audio_encoder: joint 或 frozen-lkma
        retrain_cmc_on_baseline: 集成模式下是否用基线关键运动重新训练 CMC
        seeds: 模型初始化与打乱顺序的种子
        lve_squared / fdd_variance: 指标变体
        max_clip_seconds: 推理时的片段长度上限
        output_dir: 输出目录
    """
    DEFAULT_SEEDS = (0, 1, 2)

    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelSection = field(default_factory=ModelSection)
    weights: LossWeights = field(default_factory=LossWeights)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    keyframe_source: str = 'phoneme'
    audio_guidance: bool = True
    key_decoder: str = 'learned'
    cmc_audio_encoder: str = 'joint'
    retrain_cmc_on_baseline: bool = False
    seeds: List[int] = field(default_factory=lambda: list(ExperimentConfig.DEFAULT_SEEDS))
    lve_squared: bool = True
    fdd_variance: bool = False
    max_clip_seconds: Optional[float] = None
    corpus_dir: Optional[str] = None
    output_dir: str = 'runs/default'

    def __post_init__(self):
        KeyframeSource.parse(self.keyframe_source)
        if self.key_decoder not in KEY_DECODERS:
            raise ValidationError(f"key_decoder must be one of {KEY_DECODERS}, got {self.key_decoder!r}")
        if self.cmc_audio_encoder not in CMC_AUDIO_ENCODERS:
            raise ValidationError(f"cmc_audio_encoder must be one of {CMC_AUDIO_ENCODERS}, "
                                  f"got {self.cmc_audio_encoder!r}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if self.max_clip_seconds is not None and not self.max_clip_seconds > 0:
            raise ValidationError(f"max_clip_seconds must be positive, got {self.max_clip_seconds}")

    @property
    def fps(self) -> float:
        return float(self.corpus.fps)

    def to_dict(self) -> Dict:
        return ensure_json_safe(asdict(self))


SECTIONS = {'corpus': CorpusConfig, 'model': ModelSection, 'weights': LossWeights, 'training': TrainingConfig}


def _build(cls, doc: Dict, where: str):
    if not isinstance(doc, dict):
        raise ValidationError(f"config section {where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"unknown config keys in {where}: {', '.join(unknown)}")
    try:
        return cls(**doc)
    except TypeError as e:
        raise ValidationError(f"bad config section {where}: {e}") from e


def config_from_dict(doc: Dict) -> ExperimentConfig:
    doc = dict(doc)
    sections = {name: _build(cls, doc.pop(name), name) for name, cls in SECTIONS.items() if name in doc}
    return _build(ExperimentConfig, {**doc, **sections}, 'top level')


def apply_env_overrides(config: ExperimentConfig, environ: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    value = environ.get(SEED_ENV)
    if value:
        try:
            config.seeds = [int(value)]
        except ValueError as e:
            raise ValidationError(f"{SEED_ENV} must be an integer, got {value!r}") from e
    return config


def load_config(path: Optional[Union[str, Path]] = None, environ: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """读取 JSON 配置（path 为空时使用全部默认值），再应用环境变量覆盖。"""
    config = config_from_dict(load_json(path)) if path else ExperimentConfig()
    return apply_env_overrides(config, environ)


def canonical_json(config: ExperimentConfig) -> str:
    doc = {k: v for k, v in config.to_dict().items() if k not in HASH_EXCLUDED}
    return json.dumps(doc, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def config_hash(config: ExperimentConfig) -> str:
    """规范化 JSON 的 SHA-256 前 12 位十六进制。"""
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()[:12]
