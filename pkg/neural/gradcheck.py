"""
梯度校验：反向传播梯度 vs 中心差分
"""
import logging
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import torch

logger = logging.getLogger(__name__)


class NonDeterministicLossError(RuntimeError):
    """同一输入两次求值结果不同"""
    pass


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor],
               epsilon: float = 1e-4, max_coords: Optional[int] = 64, seed: int = 0,
               abs_floor: float = 1e-5, names: Optional[Sequence[str]] = None) -> float:
    """
    比较 autograd 梯度与中心差分，返回采样坐标上的最大相对误差。

    Args:
        loss_fn: 无参闭包，读取 params 的当前值返回标量
        params: 需要校验的叶子张量（requires_grad=True），建议 float64
        epsilon: 差分步长
        max_coords: 每个张量最多采样的坐标数，None 表示全部
        seed: 采样坐标的随机种子
        abs_floor: 相对误差分母的下限，梯度恰为 0 时不放大误差
        names: 日志中使用的参数名

    Returns:
        float: max |g_a - g_n| / max(|g_a|, |g_n|, abs_floor)

    Raises:
        NonDeterministicLossError: loss_fn 两次求值不一致
    """
    params = list(params)
    names = list(names) if names is not None else [f"param{i}" for i in range(len(params))]

    loss = loss_fn()
    with torch.no_grad():
        again = loss_fn()
    if not torch.equal(loss.detach(), again.detach()):
        raise NonDeterministicLossError(
            f"loss_fn returned {loss.item()!r} then {again.item()!r} for identical inputs")

    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_at: Dict[str, object] = {}

    for name, p, g in zip(names, params, analytic):
        g = torch.zeros_like(p) if g is None else g
        flat_p = p.data.view(-1)
        flat_g = g.reshape(-1)
        count = flat_p.numel()
        if max_coords is None or count <= max_coords:
            coords = np.arange(count)
        else:
            coords = np.sort(rng.choice(count, size=max_coords, replace=False))
        for i in coords:
            original = flat_p[i].item()
            with torch.no_grad():
                flat_p[i] = original + epsilon
                plus = loss_fn().item()
                flat_p[i] = original - epsilon
                minus = loss_fn().item()
                flat_p[i] = original
            numeric = (plus - minus) / (2 * epsilon)
            a = flat_g[i].item()
            err = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
            if err > worst:
                worst = err
                worst_at = {'param': name, 'index': int(i), 'analytic': a, 'numeric': numeric}

    if worst_at:
        logger.debug("grad_check worst relative error %.3e at %s", worst, worst_at)
    return worst
