"""
跨模态运动补全（CMC）

运动流编码器把稀疏关键运动扩展为 N×d 的运动流特征 Φ：
    关键帧: [K, PE(I)] → 编码块 → Φ_k
    非关键帧: PE(I′) → L(16,f) → 编码块 → 查询，对 Φ_k 做交叉注意力 → Φ_non-key
    按时间位置排布 FFN(Φ_k) 与 Φ_non-key → Conv1D → 编码块 → Conv1D → L(f,d)
门控融合 G = σ([A, Φ]W)，Z = G⊙A + (1−G)⊙Φ，再由运动解码器输出完整序列。
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from torch import nn

from models import KeyMotionSet, ValidationError
from neural import Conv1d, EncoderStack, FeedForward, Linear, MultiheadAttention, linear, sinusoidal_pe
from pipeline.components import AudioEncoder, ModelDims, MotionDecoder

CMC_AUDIO_ENCODERS = ('joint', 'frozen-lkma')


@dataclass
class MotionFlowFeatures:
    """Φ（N×d）与逐行来源标记：True 表示该行来自关键帧。"""
    phi: torch.Tensor
    from_key: np.ndarray

    def __post_init__(self):
        if self.from_key.shape != (self.phi.shape[0],):
            raise ValidationError("provenance flags must cover every row of the motion flow features")

    @property
    def key_rows(self) -> np.ndarray:
        return np.flatnonzero(self.from_key)


class MotionFlowEncoder(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        f, heads, depth = dims.f, dims.flow_heads, dims.flow_depth
        self.pe_dim = dims.pe_dim
        self.key_proj = Linear(3 * dims.vertex_count + dims.pe_dim, f)
        self.key_blocks = EncoderStack(f, heads, depth)
        self.query_proj = Linear(dims.pe_dim, f)
        self.query_blocks = EncoderStack(f, heads, depth)
        self.cross_attn = MultiheadAttention(f, heads)
        self.key_ffn = FeedForward(f, 2 * f)
        self.fuse_in = Conv1d(f, f, dims.conv_width)
        self.fuse_blocks = EncoderStack(f, heads, depth)
        self.fuse_out = Conv1d(f, f, dims.conv_width)
        self.out = Linear(f, dims.d)

    def encode_keys(self, key_motions: torch.Tensor, indices: torch.Tensor) -> torch.Tensor:
        pe = sinusoidal_pe(indices, self.pe_dim, dtype=key_motions.dtype)
        tokens = torch.cat([key_motions.reshape(key_motions.shape[0], -1), pe], dim=1)
        return self.key_blocks(self.key_proj(tokens))

    def encode_queries(self, positions: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        pe = sinusoidal_pe(positions, self.pe_dim, dtype=like.dtype)
        return self.query_blocks(self.query_proj(pe))

    def arrange(self, key_tokens: torch.Tensor, nonkey_tokens: torch.Tensor, indices: torch.Tensor,
                complement: torch.Tensor, n_frames: int) -> torch.Tensor:
        """把两组 token 按时间位置放进同一个 N×f 网格。"""
        grid = key_tokens.new_zeros(n_frames, key_tokens.shape[1])
        grid = grid.index_copy(0, indices, key_tokens)
        if complement.numel():
            grid = grid.index_copy(0, complement, nonkey_tokens)
        return grid

    def forward(self, key_motions: torch.Tensor, indices: torch.Tensor, n_frames: int) -> torch.Tensor:
        complement = _complement(indices, n_frames)
        phi_k = self.encode_keys(key_motions, indices)
        if complement.numel():
            queries = self.encode_queries(complement, phi_k)
            phi_nonkey = self.cross_attn(queries, phi_k)
        else:
            phi_nonkey = phi_k.new_zeros(0, phi_k.shape[1])
        grid = self.arrange(self.key_ffn(phi_k), phi_nonkey, indices, complement, n_frames)
        x = self.fuse_out(self.fuse_blocks(self.fuse_in(grid)))
        return self.out(x)


class CmcModel(nn.Module):
    """
    CMC 模型，自带一个音频编码器。

    audio_encoder_mode 为 joint 时该编码器单独初始化、与 CMC 一起训练；为 frozen-lkma 时
    它载入 LKMA 的编码器参数并冻结。两种模式下推理都用 LKMA 的编码器计算音频特征
    （见 pipeline.inference.complete_motion）。
    """
    KIND = 'cmc'

    def __init__(self, dims: ModelDims, audio_guidance: bool = True, audio_encoder_mode: str = 'joint'):
        super().__init__()
        if audio_encoder_mode not in CMC_AUDIO_ENCODERS:
            raise ValidationError(f"cmc audio encoder must be one of {CMC_AUDIO_ENCODERS}, got {audio_encoder_mode!r}")
        self.dims = dims
        self.audio_guidance = audio_guidance
        self.audio_encoder_mode = audio_encoder_mode
        self.audio_encoder = AudioEncoder(dims)
        self.flow_encoder = MotionFlowEncoder(dims)
        self.gate = Linear(2 * dims.d, dims.d, bias=False)
        self.motion_decoder = MotionDecoder(dims)

    def hyperparameters(self) -> Dict:
        return {'dims': self.dims.to_dict(), 'audio_guidance': self.audio_guidance,
                'audio_encoder_mode': self.audio_encoder_mode}

    def load_audio_encoder(self, source: AudioEncoder) -> None:
        """复制 LKMA 的音频编码器参数并冻结。"""
        self.audio_encoder.load_state_dict(source.state_dict())
        for p in self.audio_encoder.parameters():
            p.requires_grad_(False)

    def trainable_names(self):
        frozen = self.audio_encoder_mode == 'frozen-lkma'
        return [name for name, _ in self.named_parameters()
                if not (frozen and name.startswith('audio_encoder.'))]


def _complement(indices: torch.Tensor, n_frames: int) -> torch.Tensor:
    mask = torch.ones(n_frames, dtype=torch.bool)
    mask[indices] = False
    return torch.nonzero(mask, as_tuple=False).reshape(-1)


def _check_keys(indices: torch.Tensor, key_motions: torch.Tensor, n_frames: int) -> None:
    m = indices.numel()
    if m == 0:
        raise ValidationError("motion completion needs at least one key motion")
    if m > n_frames:
        raise ValidationError(f"{m} key motions for {n_frames} frames")
    if int(indices.min()) < 0 or int(indices.max()) >= n_frames:
        raise ValidationError(f"key indices must lie in [0, {n_frames})")
    if m > 1 and bool((indices[1:] <= indices[:-1]).any()):
        raise ValidationError("key indices must be sorted and unique")
    if key_motions.shape[0] != m:
        raise ValidationError(f"{key_motions.shape[0]} key motions for {m} key indices")


def encode_motion_flow(model: CmcModel, key: KeyMotionSet) -> MotionFlowFeatures:
    like = next(model.parameters())
    indices = torch.as_tensor(key.indices, dtype=torch.long)
    motions = torch.as_tensor(np.asarray(key.motions), dtype=like.dtype)
    return motion_flow(model, indices, motions, key.n_frames)


def motion_flow(model: CmcModel, indices: torch.Tensor, key_motions: torch.Tensor,
                n_frames: int) -> MotionFlowFeatures:
    _check_keys(indices, key_motions, n_frames)
    from_key = np.zeros(n_frames, dtype=bool)
    from_key[indices.numpy()] = True
    return MotionFlowFeatures(phi=model.flow_encoder(key_motions, indices, n_frames), from_key=from_key)


def gated_fuse(audio: torch.Tensor, phi: torch.Tensor, weight: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    G = σ([A, Φ]W)，Z = G⊙A + (1−G)⊙Φ。

    Args:
        audio: N×d
        phi: N×d
        weight: 2d×d

    Returns:
        (G, Z)
    """
    if audio.shape != phi.shape:
        raise ValidationError(f"audio features {tuple(audio.shape)} and motion flow {tuple(phi.shape)} differ")
    if weight.shape != (2 * audio.shape[1], audio.shape[1]):
        raise ValidationError(f"gate weight must be {2 * audio.shape[1]}×{audio.shape[1]}, got {tuple(weight.shape)}")
    gate = torch.sigmoid(linear(torch.cat([audio, phi], dim=1), weight))
    return gate, gate * audio + (1.0 - gate) * phi


def decode_motion(model: CmcModel, z: torch.Tensor) -> torch.Tensor:
    return model.motion_decoder(z)


def cmc_forward(model: CmcModel, audio: torch.Tensor, indices, key_motions: torch.Tensor) -> torch.Tensor:
    """
    Y = CMC(A, K, I)，输出帧数等于 A 的帧数。

    关闭音频引导时 A 以全零代替，门控路径保持不变。
    """
    idx = torch.as_tensor(np.asarray(indices, dtype=np.int64), dtype=torch.long).reshape(-1)
    flow = motion_flow(model, idx, key_motions, audio.shape[0])
    if not model.audio_guidance:
        audio = torch.zeros_like(audio)
    _, z = gated_fuse(audio, flow.phi, model.gate.weight)
    return decode_motion(model, z)


def cmc_encode_audio(model: CmcModel, features: torch.Tensor, speaker: Optional[int] = None) -> torch.Tensor:
    return model.audio_encoder(features.to(next(model.parameters()).dtype), speaker)


def extract_key_from_baseline(baseline_pred, indices) -> KeyMotionSet:
    """从基线模型的完整预测中按 I 取出关键运动（集成模式）。"""
    return KeyMotionSet.from_sequence(baseline_pred, indices)
