"""
消融套件：完整模型、均匀采样、基线关键运动、去掉音频引导、下标 +1 偏移、
步长 2/3/4 扫描以及直接回归基线，输出对比表与各项排序判定。

判定比较的是多个种子上的平均测试 LVE。
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from data.synth import Corpus
from evaluation.metrics import interp_reconstruct, lip_offset_curve, rms
from evaluation.report import write_csv
from experiments.config import ExperimentConfig
from experiments.runner import (BASELINE_VARIANT, ExperimentRunner, ProgressFn, Variant, VariantScore)

logger = logging.getLogger(__name__)

SUITE_VARIANTS = (
    Variant('full', 'phoneme'),
    Variant('uniform:3', 'uniform:3'),
    Variant('baseline-extracted', 'phoneme', key_decoder='baseline-extracted'),
    Variant('no-audio', 'phoneme', audio_guidance=False),
    Variant('phoneme+offset:+1', 'phoneme', inference_offset=1),
    Variant('uniform:2', 'uniform:2'),
    Variant('uniform:4', 'uniform:4'),
    Variant(BASELINE_VARIANT, baseline_only=True),
)
SWEEP_VARIANTS = ('full', 'uniform:2', 'uniform:3', 'uniform:4')
VERDICT_COLUMNS = ['criterion', 'description', 'value', 'reference', 'passed', 'detail']

# 判定阈值
MIN_BASELINE_GAIN = 0.05
BUDGET_TOLERANCE = 0.15
MIN_AUDIO_PENALTY = 0.10
MAX_OFFSET_CHANGE = 0.10
CURVE_SEQUENCES = 20
CURVE_WIN_FRACTION = 0.8


class IncompleteSuiteError(RuntimeError):
    """套件中有变体没有产生结果"""

    def __init__(self, missing: Sequence[str], config_hash: str):
        super().__init__(f"ablation suite (config {config_hash}) is missing variants: {', '.join(missing)}")
        self.missing = list(missing)


@dataclass
class Verdict:
    criterion: str
    description: str
    value: float
    reference: float
    passed: bool
    detail: str = ""


@dataclass
class AblationResult:
    run_dir: Path
    config_hash: str
    comparison: pd.DataFrame
    verdicts: List[Verdict]
    curve_fit: pd.DataFrame

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


def matched_uniform_indices(n_frames: int, count: int) -> np.ndarray:
    """在 [0, N-1] 上均匀取 count 个下标（四舍五入后去重）。"""
    count = max(2, min(count, n_frames))
    return np.unique(np.round(np.linspace(0, n_frames - 1, count)).astype(np.int64))


def curve_fit_table(corpus: Corpus, limit: int = CURVE_SEQUENCES) -> pd.DataFrame:
    """
    唇部位移曲线的分段线性重建误差：音素边界关键帧 vs 同数量的均匀关键帧。

    依次从 test、val、train 划分中取前 limit 条真值序列。
    """
    samples = []
    for name in ('test', 'val', 'train'):
        if name in corpus.splits:
            samples.extend(corpus.split(name))
    rows = []
    for sample in samples[:limit]:
        curve = lip_offset_curve(sample.motion, corpus.mesh)
        keys = sample.key_indices()
        knots = np.unique(np.concatenate([keys, [0, sample.n_frames - 1]]))
        uniform = matched_uniform_indices(sample.n_frames, knots.size)
        phoneme_err = rms(curve, interp_reconstruct(curve, keys))
        uniform_err = rms(curve, interp_reconstruct(curve, uniform))
        rows.append({'seq_id': sample.sample_id, 'key_count': int(knots.size),
                     'rms_phoneme': phoneme_err, 'rms_uniform': uniform_err,
                     'phoneme_wins': int(phoneme_err < uniform_err)})
    return pd.DataFrame(rows, columns=['seq_id', 'key_count', 'rms_phoneme', 'rms_uniform', 'phoneme_wins'])


def _means(scores: Sequence[VariantScore]) -> Dict[str, Dict[str, float]]:
    table: Dict[str, List[VariantScore]] = {}
    for s in scores:
        table.setdefault(s.variant, []).append(s)
    return {name: {'lve': float(np.mean([s.report.lve for s in group])),
                   'key_count': float(np.mean([s.key_count for s in group]))}
            for name, group in table.items()}


def ordering_verdicts(means: Dict[str, Dict[str, float]], curve_fit: pd.DataFrame) -> List[Verdict]:
    """按平均 LVE 计算各项排序判定。"""
    lve = {name: m['lve'] for name, m in means.items()}
    full, baseline = lve['full'], lve[BASELINE_VARIANT]
    budget = means['uniform:3']['key_count'] / means['full']['key_count'] if means['full']['key_count'] else float('inf')
    budget_ok = abs(budget - 1.0) <= BUDGET_TOLERANCE
    offset_change = abs(lve['phoneme+offset:+1'] - full) / full if full else float('inf')
    wins, n_curves = int(curve_fit['phoneme_wins'].sum()), len(curve_fit)
    needed = int(np.ceil(CURVE_WIN_FRACTION * n_curves))

    return [
        Verdict('AC-3', 'full pipeline beats direct baseline by >= 5% on LVE',
                full, (1 - MIN_BASELINE_GAIN) * baseline, full <= (1 - MIN_BASELINE_GAIN) * baseline),
        Verdict('AC-4', 'phoneme keys < uniform:3 keys on LVE at matched budget',
                full, lve['uniform:3'], full < lve['uniform:3'] and budget_ok,
                f"key budget ratio {budget:.4f}"),
        Verdict('AC-5', 'CMC on baseline-extracted keys <= baseline on LVE',
                lve['baseline-extracted'], baseline, lve['baseline-extracted'] <= baseline),
        Verdict('AC-6', 'no-audio-guidance exceeds full by >= 10% on LVE',
                lve['no-audio'], (1 + MIN_AUDIO_PENALTY) * full, lve['no-audio'] >= (1 + MIN_AUDIO_PENALTY) * full),
        Verdict('AC-7', 'phoneme keys reconstruct lip-offset curves better than uniform keys',
                float(wins), float(needed), n_curves > 0 and wins >= needed, f"{wins}/{n_curves} sequences"),
        Verdict('AC-8', 'offset(+1) within 10% of full on LVE',
                offset_change, MAX_OFFSET_CHANGE, offset_change < MAX_OFFSET_CHANGE),
    ]


def run_ablation_suite(base: ExperimentConfig, run_dir: Optional[Union[str, Path]] = None,
                       progress: Optional[ProgressFn] = None,
                       variants: Sequence[Variant] = SUITE_VARIANTS) -> AblationResult:
    """
    执行全部消融变体并写出：
        results.csv / results_by_seed.csv  各变体指标
        key_quantity.csv                   关键帧数量扫描
        curve_fit.csv                      唇部曲线重建对比
        verdicts.csv                       排序判定

    Raises:
        IncompleteSuiteError: 有变体未产生结果
        StageFailedError: 任一训练或评测阶段失败
    """
    runner = ExperimentRunner(base, run_dir, progress)
    scores = runner.evaluate_all(variants, save_for=('full',))
    expected = [v.name for v in SUITE_VARIANTS]
    produced = {s.variant for s in scores}
    missing = [name for name in expected if name not in produced]
    if missing:
        raise IncompleteSuiteError(missing, runner.config_hash)

    comparison, _ = runner.write_results(scores)
    sweep = comparison[comparison['variant'].isin(SWEEP_VARIANTS)][['variant', 'key_count', 'key_proportion', 'lve']]
    write_csv(sweep, runner.run_dir / 'key_quantity.csv', runner.config_hash)

    curve_fit = curve_fit_table(runner.corpus)
    write_csv(curve_fit, runner.run_dir / 'curve_fit.csv', runner.config_hash)

    verdicts = ordering_verdicts(_means(scores), curve_fit)
    write_csv(pd.DataFrame([v.__dict__ for v in verdicts], columns=VERDICT_COLUMNS),
              runner.run_dir / 'verdicts.csv', runner.config_hash)
    for v in verdicts:
        logger.info("%s %s: %s", v.criterion, 'PASS' if v.passed else 'FAIL', v.description)
    return AblationResult(runner.run_dir, runner.config_hash, comparison, verdicts, curve_fit)
