"""
推理计时：逐片段记录 featurize / localize / lkma / cmc 四个阶段的耗时
"""
import logging
import time
from collections import defaultdict
from contextlib import contextmanager
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from audio.frontend import AudioSource
from data.synth import CorpusSample
from models import ValidationError
from neural import ParamStore
from pipeline.cmc import CmcModel
from pipeline.inference import infer_full
from pipeline.lkma import LkmaModel

logger = logging.getLogger(__name__)

STAGES = ('featurize', 'localize', 'lkma', 'cmc')
TIMING_COLUMNS = ['stage', 'mean_s', 'p95_s', 'count']


class StageTimer:
    """按阶段名累积 wall-clock 耗时（time.perf_counter）。"""

    def __init__(self):
        self.samples: Dict[str, List[float]] = defaultdict(list)

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.samples[name].append(time.perf_counter() - start)

    def table(self, order: Sequence[str] = STAGES + ('total',)) -> pd.DataFrame:
        rows = []
        for name in order:
            values = np.asarray(self.samples.get(name, []), dtype=np.float64)
            if values.size == 0:
                continue
            rows.append({'stage': name, 'mean_s': float(values.mean()),
                         'p95_s': float(np.percentile(values, 95)), 'count': int(values.size)})
        return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def run_timing(lkma_model: LkmaModel, cmc_model: CmcModel, samples: Sequence[CorpusSample],
               repeats: int = 1, max_clip_seconds: Optional[float] = None,
               progress_callback=None) -> pd.DataFrame:
    """
    对每条样本做完整推理并计时。

    Args:
        lkma_model / cmc_model: 推理用模型（耗时与参数取值无关，未训练的模型也可以）
        samples: 待推理的样本，使用其预计算特征与音素对齐
        repeats: 每条样本重复次数
        max_clip_seconds: 长音频切分上限
        progress_callback: 可选回调 (current, total)

    Returns:
        每个阶段一行 (stage, mean_s, p95_s, count)，最后一行为 total
    """
    if not samples:
        raise ValidationError("timing needs at least one sample")
    if repeats < 1:
        raise ValidationError(f"repeats must be ≥ 1, got {repeats}")
    timer = StageTimer()
    total = len(samples) * repeats
    done = 0
    for _ in range(repeats):
        for sample in samples:
            source = AudioSource.from_features(sample.audio)
            speaker = sample.speaker.id if lkma_model.dims.speaker_count > 0 else None
            with timer.stage('total'):
                infer_full(lkma_model, cmc_model, source, sample.alignment, sample.motion.fps, speaker,
                           max_clip_seconds=max_clip_seconds, stage=timer.stage)
            done += 1
            if progress_callback:
                progress_callback(done, total)
    table = timer.table()
    logger.info("timed %d clips: %.4f s mean total", total,
                float(table.loc[table['stage'] == 'total', 'mean_s'].iloc[0]))
    return table


def untrained_models(dims, seed: int = 0):
    """按配置构造并初始化一对模型，只用于计时。"""
    lkma_model, cmc_model = LkmaModel(dims), CmcModel(dims)
    ParamStore(lkma_model, seed).initialize()
    ParamStore(cmc_model, seed + 1).initialize()
    return lkma_model, cmc_model
