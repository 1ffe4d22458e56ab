import math
from typing import List

import numpy as np


def round_half_up(x: float) -> int:
    """四舍五入（0.5 向上），用于时间戳到帧号的映射。"""
    # 1e-9 吸收 0.2*25 = 5.000000000000001 这类浮点误差
    return int(math.floor(x + 0.5 + 1e-9))


def seconds_to_frame(t: float, fps: float) -> int:
    return round_half_up(t * fps)


def frame_count(duration: float, fps: float) -> int:
    """时长对应的帧数 N = round(duration × fps)。"""
    return round_half_up(duration * fps)


def child_seeds(seed: int, n: int) -> List[int]:
    """从一个种子派生 n 个互不相关的子种子。"""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]
