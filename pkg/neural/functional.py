"""
可微分基础算子

全部算子作用于 torch 张量，反向梯度由 torch.autograd 提供。权重布局沿用
c_in×c_out（x @ W + b），卷积核为 width×c_in×c_out。
"""
import math
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from models.validation import ValidationError

PE_BASE = 10000.0


class ShapeError(ValidationError):
    """张量形状不匹配"""
    pass


class AttentionParams(NamedTuple):
    w_q: torch.Tensor
    b_q: Optional[torch.Tensor]
    w_k: torch.Tensor
    b_k: Optional[torch.Tensor]
    w_v: torch.Tensor
    b_v: Optional[torch.Tensor]
    w_o: torch.Tensor
    b_o: Optional[torch.Tensor]


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """仿射变换 seq×c_in → seq×c_out。"""
    if weight.dim() != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input has {x.shape[-1]} channels, weight is {tuple(weight.shape)}")
    out = x @ weight
    if bias is None:
        return out
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {tuple(bias.shape)} does not match {weight.shape[1]} outputs")
    return out + bias


def multihead_attention(query: torch.Tensor, key_value: torch.Tensor, heads: int,
                        params: AttentionParams, return_weights: bool = False
                        ) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
    """
    多头缩放点积注意力。

    Args:
        query: n_q×f
        key_value: n_kv×f；自注意力时与 query 相同
        heads: 头数，f 必须能被整除
        params: 各头投影与输出投影参数
        return_weights: 是否同时返回 heads×n_q×n_kv 注意力权重

    Returns:
        n_q×f 输出（以及可选的注意力权重）
    """
    n_q, f = query.shape
    n_kv = key_value.shape[0]
    if heads < 1 or f % heads:
        raise ShapeError(f"attention: feature size {f} is not divisible by {heads} heads")
    if key_value.shape[1] != f:
        raise ShapeError(f"attention: key/value width {key_value.shape[1]} differs from query width {f}")
    if n_kv == 0:
        raise ShapeError("attention: key/value sequence is empty")
    head_dim = f // heads

    q = linear(query, params.w_q, params.b_q).reshape(n_q, heads, head_dim).transpose(0, 1)
    k = linear(key_value, params.w_k, params.b_k).reshape(n_kv, heads, head_dim).transpose(0, 1)
    v = linear(key_value, params.w_v, params.b_v).reshape(n_kv, heads, head_dim).transpose(0, 1)

    scores = q @ k.transpose(-1, -2) / math.sqrt(head_dim)
    weights = torch.softmax(scores, dim=-1)
    context = (weights @ v).transpose(0, 1).reshape(n_q, f)
    out = linear(context, params.w_o, params.b_o)
    return (out, weights) if return_weights else out


def sinusoidal_pe(positions: Union[Sequence[int], torch.Tensor], dim: int,
                  dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    """
    无参数正余弦位置编码，偶数维 sin、奇数维 cos，频率基数 10000。

    位置 0 得到 [0, 1, 0, 1, ...]。
    """
    if dim < 2 or dim % 2:
        raise ShapeError(f"positional encoding dim must be even, got {dim}")
    pos = torch.as_tensor(positions, dtype=torch.float64).reshape(-1, 1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(PE_BASE) / dim))
    pe = torch.zeros(pos.shape[0], dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe.to(dtype or torch.get_default_dtype())


def conv1d(x: torch.Tensor, kernel: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    沿序列轴的互相关，零填充保持长度（same padding）。

    Args:
        x: n×c_in
        kernel: width×c_in×c_out，width 必须为奇数
    """
    width, c_in, c_out = kernel.shape
    if width % 2 == 0:
        raise ShapeError(f"conv1d kernel width must be odd, got {width}")
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv1d: input has {x.shape[-1]} channels, kernel expects {c_in}")
    out = F.conv1d(x.t().unsqueeze(0), kernel.permute(2, 1, 0), bias, padding=width // 2)
    return out.squeeze(0).t()


def feed_forward(x: torch.Tensor, w1: torch.Tensor, b1: Optional[torch.Tensor],
                 w2: torch.Tensor, b2: Optional[torch.Tensor]) -> torch.Tensor:
    return linear(F.gelu(linear(x, w1, b1)), w2, b2)
