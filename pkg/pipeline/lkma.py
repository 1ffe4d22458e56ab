"""
语言学关键运动获取（LKMA）

音频编码 → 按关键帧下标取出对齐的音频特征 → 关键运动解码器生成关键运动 K。
训练时把 K 填回真值序列的关键帧位置得到伪完整序列 Y_p，在 Y_p 上计算
重建、速度、隐空间一致性与唇读 CTC 四项损失。
"""
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from models import AudioFeatureSequence, KeyMotionSet, MotionSequence, ValidationError
from neural import DecoderBlock, EncoderBlock, Linear, ctc_loss, sinusoidal_pe
from pipeline.components import AudioEncoder, ModelDims


@dataclass(frozen=True)
class LossWeights:
    """λ1..λ4：重建、速度、隐空间一致性、文本一致性。"""
    DEFAULT_REC = 1000.0
    DEFAULT_VEL = 1000.0
    DEFAULT_LAT = 1e-3
    DEFAULT_CTC = 1e-4

    rec: float = DEFAULT_REC
    vel: float = DEFAULT_VEL
    lat: float = DEFAULT_LAT
    ctc: float = DEFAULT_CTC

    def __post_init__(self):
        for name in ('rec', 'vel', 'lat', 'ctc'):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name} must be non-negative, got {getattr(self, name)}")


class LossComponents(NamedTuple):
    rec: torch.Tensor
    vel: torch.Tensor
    lat: torch.Tensor
    ctc: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {'L_rec': float(self.rec), 'L_vel': float(self.vel),
                'L_lat': float(self.lat), 'L_ctc': float(self.ctc)}


class KeyMotionDecoder(nn.Module):
    """L(d,f) + 关键帧下标位置编码 → TransformerDecoder(f,4,2f,1) → L(f,3V)"""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.f, self.vertex_count, self.memory = dims.f, dims.vertex_count, dims.decoder_memory
        self.proj = Linear(dims.d, dims.f)
        self.block = DecoderBlock(dims.f, dims.decoder_heads)
        self.out = Linear(dims.f, 3 * dims.vertex_count)

    def embed(self, rows: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        return self.proj(rows) + sinusoidal_pe(positions, self.f, dtype=rows.dtype)

    def forward(self, key_features: torch.Tensor, indices: torch.Tensor,
                audio: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = self.embed(key_features, indices)
        if self.memory == 'audio':
            if audio is None:
                raise ValidationError("decoder_memory='audio' needs the full audio feature sequence")
            memory = self.embed(audio, torch.arange(audio.shape[0]))
        else:
            memory = x
        x = self.block(x, memory)
        return self.out(x).reshape(key_features.shape[0], self.vertex_count, 3)


class LipShapeEncoder(nn.Module):
    """逐帧唇部顶点 → d 维隐特征（与音频编码器输出比较）。"""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.proj = Linear(3 * dims.lip_count, dims.d)
        self.block = EncoderBlock(dims.d, dims.encoder_heads)

    def forward(self, lips: torch.Tensor) -> torch.Tensor:
        return self.block(self.proj(lips))


class LipReadingDecoder(nn.Module):
    """逐帧唇部顶点 → vocab+1 维 CTC logits。"""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.proj = Linear(3 * dims.lip_count, dims.f)
        self.block = EncoderBlock(dims.f, dims.decoder_heads)
        self.out = Linear(dims.f, dims.vocab_size + 1)

    def forward(self, lips: torch.Tensor) -> torch.Tensor:
        return self.out(self.block(self.proj(lips)))


class LkmaModel(nn.Module):
    KIND = 'lkma'

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.audio_encoder = AudioEncoder(dims)
        self.key_decoder = KeyMotionDecoder(dims)
        self.lip_encoder = LipShapeEncoder(dims)
        self.lip_reader = LipReadingDecoder(dims)
        self.register_buffer('lip_index', torch.as_tensor(dims.lip_vertices, dtype=torch.long), persistent=False)

    def lip_rows(self, motion: torch.Tensor) -> torch.Tensor:
        """N×V×3 → N×3L"""
        return motion.index_select(1, self.lip_index).reshape(motion.shape[0], -1)

    def hyperparameters(self) -> Dict:
        return {'dims': self.dims.to_dict()}


def _as_features(features: Union[AudioFeatureSequence, torch.Tensor], like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    if isinstance(features, AudioFeatureSequence):
        return torch.as_tensor(np.asarray(features.features), dtype=dtype)
    return features.to(dtype)


def _as_index(indices: Union[Sequence[int], np.ndarray, torch.Tensor]) -> torch.Tensor:
    return torch.as_tensor(np.asarray(indices, dtype=np.int64), dtype=torch.long).reshape(-1)


def encode_audio(model: LkmaModel, features: Union[AudioFeatureSequence, torch.Tensor],
                 speaker: Optional[int] = None) -> torch.Tensor:
    """A = AudioEncoder(features)，N×d。"""
    return model.audio_encoder(_as_features(features, model), speaker)


def select_key_features(audio: torch.Tensor, indices) -> torch.Tensor:
    """A_k = A[I]，按 I 的顺序取行。"""
    idx = _as_index(indices)
    n = audio.shape[0]
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= n):
        raise ValidationError(f"key indices must lie in [0, {n}), got range "
                              f"[{int(idx.min())}, {int(idx.max())}]")
    return audio.index_select(0, idx)


def decode_key_motions(model: LkmaModel, key_features: torch.Tensor, indices,
                       audio: Optional[torch.Tensor] = None) -> torch.Tensor:
    """A_k (m×d) → K (m×V×3)。"""
    if key_features.shape[0] < 1:
        raise ValidationError("decode_key_motions needs at least one key row")
    idx = _as_index(indices)
    if idx.numel() != key_features.shape[0]:
        raise ValidationError(f"{idx.numel()} key indices for {key_features.shape[0]} key rows")
    return model.key_decoder(key_features, idx, audio)


def pseudo_complete(gt: torch.Tensor, indices, key_motions: torch.Tensor) -> torch.Tensor:
    """Y_p：关键帧位置取 K，其余取真值；对 K 可微。"""
    idx = _as_index(indices)
    if key_motions.shape[0] != idx.numel() or key_motions.shape[1:] != gt.shape[1:]:
        raise ValidationError(f"key motions {tuple(key_motions.shape)} do not fit ground truth "
                              f"{tuple(gt.shape)} at {idx.numel()} indices")
    return gt.detach().index_copy(0, idx, key_motions.to(gt.dtype))


def build_pseudo_complete(gt: MotionSequence, key: KeyMotionSet) -> MotionSequence:
    if key.n_frames != gt.n_frames:
        raise ValidationError(f"key set spans {key.n_frames} frames, ground truth has {gt.n_frames}")
    frames = gt.frames.copy()
    frames[key.indices] = key.motions.astype(frames.dtype)
    return gt.with_frames(frames)


def loss_rec(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} differ")
    return ((pred - gt) ** 2).mean()


def loss_vel(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} differ")
    if pred.shape[0] < 2:
        return pred.new_zeros(())
    return (((pred[1:] - pred[:-1]) - (gt[1:] - gt[:-1])) ** 2).mean()


def loss_lat(audio_latent: torch.Tensor, lip_latent: torch.Tensor) -> torch.Tensor:
    if audio_latent.shape != lip_latent.shape:
        raise ValidationError(f"latent shapes {tuple(audio_latent.shape)} and {tuple(lip_latent.shape)} differ")
    return ((audio_latent - lip_latent) ** 2).mean()


def loss_ctc_text(model: LkmaModel, pred_motion: torch.Tensor, transcript_tokens: Sequence[int]) -> torch.Tensor:
    return ctc_loss(model.lip_reader(model.lip_rows(pred_motion)), transcript_tokens)


def lkma_total_loss(weights: LossWeights, components: LossComponents) -> torch.Tensor:
    return (weights.rec * components.rec + weights.vel * components.vel
            + weights.lat * components.lat + weights.ctc * components.ctc)


def lkma_forward(model: LkmaModel, features: torch.Tensor, indices,
                 speaker: Optional[int] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """返回 (A, K)。"""
    audio = encode_audio(model, features, speaker)
    key_features = select_key_features(audio, indices)
    memory = audio if model.dims.decoder_memory == 'audio' else None
    return audio, decode_key_motions(model, key_features, indices, memory)


def lkma_losses(model: LkmaModel, features: torch.Tensor, gt: torch.Tensor, indices,
                transcript_tokens: Optional[Sequence[int]], weights: LossWeights,
                speaker: Optional[int] = None) -> Tuple[torch.Tensor, LossComponents]:
    """
    单条样本的 LKMA 训练损失。

    Args:
        model: LKMA 模型
        features: N×feature_dim 音频特征
        gt: N×V×3 真值运动
        indices: 关键帧下标 I
        transcript_tokens: CTC 目标；None 时文本项为 0
        weights: 损失权重
        speaker: 说话人编号

    Returns:
        (总损失, 各分量)
    """
    audio, keys = lkma_forward(model, features, indices, speaker)
    y_p = pseudo_complete(gt, indices, keys)
    lip_latent = model.lip_encoder(model.lip_rows(y_p))
    components = LossComponents(
        rec=loss_rec(y_p, gt),
        vel=loss_vel(y_p, gt),
        lat=loss_lat(audio, lip_latent),
        ctc=(loss_ctc_text(model, y_p, transcript_tokens) if transcript_tokens is not None
             else y_p.new_zeros(())),
    )
    return lkma_total_loss(weights, components), components


def predict_key_motions(model: LkmaModel, features, indices, speaker: Optional[int] = None) -> KeyMotionSet:
    """推理：返回 KeyMotionSet(I, K)。"""
    idx = np.asarray(indices, dtype=np.int64)
    with torch.no_grad():
        audio, keys = lkma_forward(model, features, idx, speaker)
    return KeyMotionSet(indices=idx, motions=keys.cpu().numpy(), n_frames=audio.shape[0])
