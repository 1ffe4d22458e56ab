"""
网络层：把 functional 中的算子包装成 nn.Module，供各模型组合。

编码块与解码块采用 post-norm 布局（子层输出 + 残差后接 LayerNorm），
不使用 dropout。
"""
import math
from typing import Optional

import torch
from torch import nn

from neural import functional as KF


def _uniform_(tensor: torch.Tensor, bound: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_(torch.rand(tensor.shape, generator=generator, dtype=torch.float64)
                     .mul_(2 * bound).sub_(bound).to(tensor.dtype))


class Linear(nn.Module):
    """L(c_in, c_out)，权重 c_in×c_out。"""

    def __init__(self, c_in: int, c_out: int, bias: bool = True):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.weight = nn.Parameter(torch.zeros(c_in, c_out))
        if bias:
            self.bias = nn.Parameter(torch.zeros(c_out))
        else:
            self.register_parameter('bias', None)

    def init_parameters(self, generator: torch.Generator) -> None:
        _uniform_(self.weight, 1.0 / math.sqrt(self.c_in), generator)
        if self.bias is not None:
            nn.init.zeros_(self.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return KF.linear(x, self.weight, self.bias)


class Embedding(nn.Module):
    """查表嵌入，count×dim。"""

    def __init__(self, count: int, dim: int):
        super().__init__()
        self.count, self.dim = count, dim
        self.weight = nn.Parameter(torch.zeros(count, dim))

    def init_parameters(self, generator: torch.Generator) -> None:
        _uniform_(self.weight, 1.0 / math.sqrt(self.dim), generator)

    def forward(self, index: int) -> torch.Tensor:
        if not 0 <= index < self.count:
            raise KF.ShapeError(f"embedding index {index} outside [0, {self.count})")
        return self.weight[index]


class MultiheadAttention(nn.Module):
    def __init__(self, f: int, heads: int):
        super().__init__()
        if f % heads:
            raise KF.ShapeError(f"feature size {f} is not divisible by {heads} heads")
        self.f, self.heads = f, heads
        self.q_proj = Linear(f, f)
        self.k_proj = Linear(f, f)
        self.v_proj = Linear(f, f)
        self.out_proj = Linear(f, f)

    def params(self) -> KF.AttentionParams:
        return KF.AttentionParams(self.q_proj.weight, self.q_proj.bias, self.k_proj.weight, self.k_proj.bias,
                                  self.v_proj.weight, self.v_proj.bias, self.out_proj.weight, self.out_proj.bias)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor, return_weights: bool = False):
        return KF.multihead_attention(query, key_value, self.heads, self.params(), return_weights)


class FeedForward(nn.Module):
    def __init__(self, f: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(f, hidden)
        self.fc2 = Linear(hidden, f)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return KF.feed_forward(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


class Conv1d(nn.Module):
    """Conv1D，核 width×c_in×c_out，same padding。"""

    def __init__(self, c_in: int, c_out: int, width: int = 3):
        super().__init__()
        if width % 2 == 0:
            raise KF.ShapeError(f"conv1d kernel width must be odd, got {width}")
        self.c_in, self.width = c_in, width
        self.kernel = nn.Parameter(torch.zeros(width, c_in, c_out))
        self.bias = nn.Parameter(torch.zeros(c_out))

    def init_parameters(self, generator: torch.Generator) -> None:
        _uniform_(self.kernel, 1.0 / math.sqrt(self.c_in * self.width), generator)
        nn.init.zeros_(self.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return KF.conv1d(x, self.kernel, self.bias)


class EncoderBlock(nn.Module):
    """自注意力 + FFN，各自残差后 LayerNorm。"""

    def __init__(self, f: int, heads: int, ffn_hidden: Optional[int] = None):
        super().__init__()
        self.self_attn = MultiheadAttention(f, heads)
        self.norm1 = nn.LayerNorm(f)
        self.ffn = FeedForward(f, ffn_hidden or 2 * f)
        self.norm2 = nn.LayerNorm(f)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] == 0:
            return x
        x = self.norm1(x + self.self_attn(x, x))
        return self.norm2(x + self.ffn(x))


class DecoderBlock(nn.Module):
    """TransformerDecoder(f, heads, 2f, 1)：自注意力、对 memory 的交叉注意力、FFN。"""

    def __init__(self, f: int, heads: int, ffn_hidden: Optional[int] = None):
        super().__init__()
        self.self_attn = MultiheadAttention(f, heads)
        self.norm1 = nn.LayerNorm(f)
        self.cross_attn = MultiheadAttention(f, heads)
        self.norm2 = nn.LayerNorm(f)
        self.ffn = FeedForward(f, ffn_hidden or 2 * f)
        self.norm3 = nn.LayerNorm(f)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.self_attn(x, x))
        x = self.norm2(x + self.cross_attn(x, memory))
        return self.norm3(x + self.ffn(x))


class EncoderStack(nn.Module):
    def __init__(self, f: int, heads: int, depth: int):
        super().__init__()
        self.blocks = nn.ModuleList(EncoderBlock(f, heads) for _ in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x
