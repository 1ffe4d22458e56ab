"""
Adam 优化器状态与单步更新
"""
from typing import Dict, Iterable, Optional, Tuple

import torch

from neural.params import ParamStore


class NonFiniteGradientError(RuntimeError):
    """梯度出现 NaN/Inf"""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name}")
        self.name = name


class OptimizerState:
    """
    包装 torch.optim.Adam，矩估计张量与参数一一对应。

    Attributes:
        lr, betas, eps: Adam 超参数
        step_count: 已执行的更新次数
    """

    DEFAULT_LR = 1e-4
    DEFAULT_BETAS = (0.9, 0.999)
    DEFAULT_EPS = 1e-8

    def __init__(self, params: ParamStore, lr: float = DEFAULT_LR,
                 betas: Tuple[float, float] = DEFAULT_BETAS, eps: float = DEFAULT_EPS,
                 trainable: Optional[Iterable[str]] = None):
        self.params = params
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        names = set(trainable) if trainable is not None else None
        self.names = [n for n, _ in params.named() if names is None or n in names]
        by_name = dict(params.named())
        self.optimizer = torch.optim.Adam([by_name[n] for n in self.names],
                                          lr=lr, betas=self.betas, eps=eps)
        self.step_count = 0

    def moments(self, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        state = self.optimizer.state.get(self.params[name])
        if not state:
            p = self.params[name]
            return torch.zeros_like(p), torch.zeros_like(p)
        return state['exp_avg'], state['exp_avg_sq']


def adam_step(params: ParamStore, grads: Dict[str, Optional[torch.Tensor]], state: OptimizerState) -> None:
    """
    一次带偏差校正的 Adam 更新（原地修改参数与状态）。

    Args:
        params: 参数
        grads: {参数名: 梯度}；缺失或 None 视为零梯度
        state: 优化器状态

    Raises:
        NonFiniteGradientError: 任一梯度含 NaN/Inf，此时参数保持不变
    """
    by_name = dict(params.named())
    prepared = {}
    for name in state.names:
        p = by_name[name]
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(name)
        prepared[name] = g.detach().to(p.dtype).reshape(p.shape)

    for name, g in prepared.items():
        by_name[name].grad = g.clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step_count += 1


def collect_grads(params: ParamStore) -> Dict[str, Optional[torch.Tensor]]:
    """读取 backward() 之后留在参数上的梯度。"""
    return {name: (None if p.grad is None else p.grad.detach().clone()) for name, p in params.named()}
