"""
直接回归基线：音频编码器 + 运动解码器，不经过关键运动，直接回归整段序列。
"""
from typing import Dict, Optional

import numpy as np
import torch
from torch import nn

from models import MotionSequence
from pipeline.components import AudioEncoder, ModelDims, MotionDecoder


class DirectBaseline(nn.Module):
    KIND = 'baseline'

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.audio_encoder = AudioEncoder(dims)
        self.motion_decoder = MotionDecoder(dims)

    def hyperparameters(self) -> Dict:
        return {'dims': self.dims.to_dict()}

    def forward(self, features: torch.Tensor, speaker: Optional[int] = None) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        return self.motion_decoder(self.audio_encoder(features.to(dtype), speaker))


def predict_baseline(model: DirectBaseline, features: torch.Tensor, fps: float, mesh_ref: str,
                     speaker: Optional[int] = None) -> MotionSequence:
    with torch.no_grad():
        frames = model(features, speaker)
    return MotionSequence(frames=frames.cpu().numpy().astype(np.float32), fps=fps, mesh_ref=mesh_ref)
