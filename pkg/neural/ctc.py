"""
CTC 损失

空白符固定为最后一类（索引 = 词表大小）。前向算法在对数空间进行，
由 F.ctc_loss 实现。
"""
from typing import Sequence

import torch
import torch.nn.functional as F

from models.validation import ValidationError


class CTCInadmissibleError(ValidationError):
    """目标序列在给定帧数下无法对齐"""
    pass


def min_ctc_length(targets: Sequence[int]) -> int:
    """对齐所需的最少帧数：目标长度 + 相邻重复个数（重复之间必须插入空白）。"""
    repeats = sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    return len(targets) + repeats


def ctc_loss(logits: torch.Tensor, targets: Sequence[int]) -> torch.Tensor:
    """
    负对数对齐概率。

    Args:
        logits: T×(vocab+1) 未归一化得分
        targets: 目标 token 序列，取值 0..vocab-1

    Returns:
        标量损失，非负

    Raises:
        CTCInadmissibleError: T 小于目标所需的最少帧数
    """
    if logits.dim() != 2:
        raise ValidationError(f"ctc_loss expects T×C logits, got shape {tuple(logits.shape)}")
    T, C = logits.shape
    blank = C - 1
    targets = [int(t) for t in targets]
    if any(t < 0 or t >= blank for t in targets):
        raise ValidationError(f"ctc target tokens must lie in [0, {blank}), got {targets}")
    needed = min_ctc_length(targets)
    if needed > T:
        raise CTCInadmissibleError(
            f"target of length {len(targets)} needs at least {needed} frames, logits have {T}")

    log_probs = F.log_softmax(logits, dim=-1)
    if not targets:
        return -log_probs[:, blank].sum()
    loss = F.ctc_loss(log_probs.unsqueeze(1),
                      torch.tensor([targets], dtype=torch.long),
                      input_lengths=torch.tensor([T], dtype=torch.long),
                      target_lengths=torch.tensor([len(targets)], dtype=torch.long),
                      blank=blank, reduction='sum', zero_infinity=False)
    # 数值误差可能给出 -1e-7 一类的值
    return loss.clamp_min(0.0)
