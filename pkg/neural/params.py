"""
ParamStore：模型参数的命名视图

参数本身由 nn.Module 持有，ParamStore 负责确定性初始化、有限性检查、
快照与 KMTF 记录之间的转换。
"""
import logging
from typing import Dict, Iterator, List, Tuple

import numpy as np
import torch
from torch import nn

from models import TensorRecord, ValidationError

logger = logging.getLogger(__name__)


class ParamStore:
    """
    按名称访问模块参数。

    同一 seed、同一结构的两个模块经 ParamStore 初始化后逐位相同。
    """

    def __init__(self, module: nn.Module, rng_seed: int = 0):
        self.module = module
        self.rng_seed = int(rng_seed)
        names = [name for name, _ in module.named_parameters()]
        if len(names) != len(set(names)):
            raise ValidationError("parameter names must be unique")

    def initialize(self) -> 'ParamStore':
        """按模块遍历顺序从同一个生成器取随机数：权重 ±1/√fan_in 均匀分布，偏置置零。"""
        generator = torch.Generator().manual_seed(self.rng_seed)
        for sub in self.module.modules():
            if hasattr(sub, 'init_parameters'):
                sub.init_parameters(generator)
            elif isinstance(sub, nn.LayerNorm):
                sub.reset_parameters()
        logger.debug("initialised %d parameters (%d values) with seed %d",
                     len(self), self.size(), self.rng_seed)
        return self

    def named(self) -> Iterator[Tuple[str, nn.Parameter]]:
        return self.module.named_parameters()

    def __len__(self) -> int:
        return sum(1 for _ in self.module.parameters())

    def __getitem__(self, name: str) -> nn.Parameter:
        params = dict(self.module.named_parameters())
        if name not in params:
            raise KeyError(name)
        return params[name]

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(p.shape) for name, p in self.named()}

    def size(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def assert_finite(self) -> None:
        for name, p in self.named():
            if not torch.isfinite(p).all():
                raise ValidationError(f"parameter {name} contains non-finite values")

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {name: p.detach().clone() for name, p in self.named()}

    def restore(self, snapshot: Dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self.named():
                p.copy_(snapshot[name])

    def equals(self, other: 'ParamStore') -> bool:
        mine, theirs = dict(self.named()), dict(other.named())
        if mine.keys() != theirs.keys():
            return False
        return all(torch.equal(mine[k], theirs[k]) for k in mine)

    def to_records(self, prefix: str = "") -> List[TensorRecord]:
        return [TensorRecord.from_array(prefix + name, p.detach().cpu().numpy().astype(np.float32))
                for name, p in self.named()]

    def load_records(self, arrays: Dict[str, np.ndarray], prefix: str = "") -> None:
        """从 {名称: 数组} 载入参数，缺失或形状不符都会报错。"""
        with torch.no_grad():
            for name, p in self.named():
                key = prefix + name
                if key not in arrays:
                    raise ValidationError(f"checkpoint is missing parameter {key}")
                value = np.asarray(arrays[key])
                if value.shape != tuple(p.shape):
                    raise ValidationError(
                        f"parameter {key}: checkpoint shape {value.shape} != model shape {tuple(p.shape)}")
                p.copy_(torch.from_numpy(np.array(value, dtype=np.float64)).to(p.dtype))
        self.assert_finite()
