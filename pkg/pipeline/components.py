"""
两个阶段共用的网络组件：维度配置、音频编码器、运动解码器
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import torch
from torch import nn

from models import ValidationError
from neural import DecoderBlock, Embedding, EncoderStack, Linear, sinusoidal_pe

DECODER_MEMORIES = ('keys', 'audio')
AUDIO_ENCODER_DEPTH = 2
FAITHFUL_DEPTH = 6


@dataclass
class ModelDims:
    """
    模型维度与结构开关。

    Attributes:
        feature_dim: 输入音频特征维度
        d: 音频/运动流特征维度
        f: 解码器与运动流编码器的隐藏维度
        vertex_count: 顶点数 V
        vocab_size: 转写词表大小（CTC 空白符为 vocab_size）
        speaker_count: 说话人嵌入表大小，0 表示不使用说话人条件
        lip_vertices: 唇部顶点下标（唇形编码器与唇读解码器的输入）
        encoder_heads / decoder_heads / flow_heads: 各部分注意力头数
        depth: 运动流编码器的块数；faithful_depth 为 True 时使用 6
        pe_dim: 非关键帧/关键帧位置编码维度
        conv_width: 融合卷积核宽度
        decoder_memory: 关键运动解码器交叉注意力的 memory（keys 或 audio）
    """
    DEFAULT_D = 64
    DEFAULT_F = 32

    feature_dim: int = 64
    d: int = DEFAULT_D
    f: int = DEFAULT_F
    vertex_count: int = 200
    vocab_size: int = 20
    speaker_count: int = 0
    lip_vertices: Tuple[int, ...] = field(default_factory=tuple)
    encoder_heads: int = 4
    decoder_heads: int = 4
    flow_heads: int = 8
    depth: int = 2
    faithful_depth: bool = False
    pe_dim: int = 16
    conv_width: int = 3
    decoder_memory: str = 'keys'

    def __post_init__(self):
        self.lip_vertices = tuple(int(v) for v in self.lip_vertices)
        for name in ('feature_dim', 'd', 'f', 'vertex_count', 'vocab_size', 'encoder_heads',
                     'decoder_heads', 'flow_heads', 'depth', 'pe_dim', 'conv_width'):
            if getattr(self, name) < 1:
                raise ValidationError(f"model dims: {name} must be positive, got {getattr(self, name)}")
        if self.speaker_count < 0:
            raise ValidationError(f"model dims: speaker_count must be ≥ 0, got {self.speaker_count}")
        if self.decoder_memory not in DECODER_MEMORIES:
            raise ValidationError(f"decoder_memory must be one of {DECODER_MEMORIES}, got {self.decoder_memory!r}")
        if self.d % self.encoder_heads:
            raise ValidationError(f"d={self.d} is not divisible by {self.encoder_heads} encoder heads")
        if self.f % self.decoder_heads or self.f % self.flow_heads:
            raise ValidationError(f"f={self.f} must be divisible by {self.decoder_heads} and {self.flow_heads} heads")
        if self.pe_dim % 2 or self.f % 2:
            raise ValidationError("positional encoding widths must be even")
        if self.conv_width % 2 == 0:
            raise ValidationError(f"conv_width must be odd, got {self.conv_width}")
        if not self.lip_vertices:
            raise ValidationError("model dims need at least one lip vertex")
        if min(self.lip_vertices) < 0 or max(self.lip_vertices) >= self.vertex_count:
            raise ValidationError(f"lip vertex indices must lie in [0, {self.vertex_count})")

    @property
    def flow_depth(self) -> int:
        return FAITHFUL_DEPTH if self.faithful_depth else self.depth

    @property
    def lip_count(self) -> int:
        return len(self.lip_vertices)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict) -> 'ModelDims':
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def for_corpus(cls, corpus, **overrides) -> 'ModelDims':
        """按语料推导 feature_dim、V、词表与唇部顶点，其余取默认值或 overrides。"""
        base = dict(feature_dim=corpus.feature_dim, vertex_count=corpus.mesh.vertex_count,
                    vocab_size=len(corpus.vocabulary),
                    lip_vertices=tuple(int(v) for v in corpus.mesh.lip_vertices))
        base.update(overrides)
        return cls(**base)


def frame_positions(n: int, dim: int, like: torch.Tensor) -> torch.Tensor:
    return sinusoidal_pe(torch.arange(n), dim, dtype=like.dtype)


class AudioEncoder(nn.Module):
    """线性投影 + 两个自注意力/FFN 块；可选的说话人嵌入加到每一帧。"""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.proj = Linear(dims.feature_dim, dims.d)
        self.blocks = EncoderStack(dims.d, dims.encoder_heads, AUDIO_ENCODER_DEPTH)
        self.speaker_table = Embedding(dims.speaker_count, dims.d) if dims.speaker_count else None

    def forward(self, features: torch.Tensor, speaker: Optional[int] = None) -> torch.Tensor:
        a = self.blocks(self.proj(features))
        if speaker is None:
            return a
        if self.speaker_table is None:
            raise ValidationError(f"speaker {speaker} given but speaker conditioning is disabled")
        if not 0 <= speaker < self.speaker_table.count:
            raise ValidationError(f"unknown speaker id {speaker} (configured speakers: {self.speaker_table.count})")
        return a + self.speaker_table(speaker)


class MotionDecoder(nn.Module):
    """L(d,f) + 帧位置编码 → 解码块（memory 为自身）→ L(f,3V)。"""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.f, self.vertex_count = dims.f, dims.vertex_count
        self.proj = Linear(dims.d, dims.f)
        self.block = DecoderBlock(dims.f, dims.decoder_heads)
        self.out = Linear(dims.f, 3 * dims.vertex_count)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = self.proj(z) + frame_positions(z.shape[0], self.f, z)
        x = self.block(x, x)
        return self.out(x).reshape(z.shape[0], self.vertex_count, 3)
