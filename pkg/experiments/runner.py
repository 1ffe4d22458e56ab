"""
实验运行器：生成语料 → 训练基线 / LKMA / CMC → 在测试集上推理与评测

同一个运行器内按 (种子, 训练签名) 缓存已训练的模型，消融套件的各变体共用。
所有输出写在 run_dir 下，每个 CSV 都带 config_hash 列，检查点的 schema 里也记录它。

目录结构：
    run_dir/
      config.json            生效配置 + config_hash
      mesh.kmtf              模板网格
      gt/<seq>.kmtf          测试集真值
      results.csv            各变体在所有种子上的平均指标
      results_by_seed.csv    逐种子指标
      seed_<s>/
        <model>.kmtf         检查点（及 .schema.json）
        <model>_loss.csv     每个 epoch 的损失
        reports/<variant>_per_sequence.csv, <variant>_aggregate.csv
        predictions/<variant>/<seq>.kmtf, keys/<seq>.kmtf
"""
import logging
import re
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from data.processor import KeyframeSource
from data.synth import Corpus, CorpusSample, generate_corpus
from evaluation.report import MetricReport, evaluate_corpus, write_csv, write_report
from experiments.config import ExperimentConfig, config_hash
from models import KeyMotionSet, MotionSequence, ValidationError
from neural import ParamStore
from pipeline.baseline import DirectBaseline, predict_baseline
from pipeline.cmc import CmcModel, extract_key_from_baseline
from pipeline.components import ModelDims
from pipeline.inference import complete_motion
from pipeline.lkma import LkmaModel, predict_key_motions
from pipeline.persistence import save_model
from pipeline.training import TrainResult, TrainingConfig, train_cmc, train_direct_baseline, train_lkma
from storage.corpus_store import load_corpus
from storage.serialize import save_key_motions, save_mesh, save_motion
from utils.numeric import child_seeds
from utils.text_utils import dump_json

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ['variant', 'lve', 'fdd', 'mve', 'key_count', 'key_proportion']
BASELINE_VARIANT = 'baseline'

# (label, current, total, **stats)
ProgressFn = Callable[..., None]


class StageFailedError(RuntimeError):
    """某个阶段失败，消息里带阶段名与 config_hash"""

    def __init__(self, stage: str, config_hash: str, cause: BaseException):
        super().__init__(f"stage {stage} failed (config {config_hash}): {cause}")
        self.stage = stage
        self.config_hash = config_hash


@dataclass(frozen=True)
class Variant:
    """
    一个待评测的流程变体。

    Attributes:
        name: 结果表中的变体名
        keyframe_source: 训练与推理所用的下标来源（phoneme 或 uniform:k）
        key_decoder: learned 用 LKMA 生成关键运动；baseline-extracted 从基线预测中取
        audio_guidance: CMC 是否使用音频引导
        inference_offset: 推理时对关键帧下标整体平移的帧数
        baseline_only: 只评测直接回归基线
    """
    name: str
    keyframe_source: str = 'phoneme'
    key_decoder: str = 'learned'
    audio_guidance: bool = True
    inference_offset: int = 0
    baseline_only: bool = False

    def __post_init__(self):
        source = KeyframeSource.parse(self.keyframe_source)
        if source.kind == 'baseline-extracted' or source.offset:
            raise ValidationError(f"variant {self.name}: keyframe_source must be phoneme or uniform:k")

    @property
    def training_source(self) -> KeyframeSource:
        return KeyframeSource.parse(self.keyframe_source)

    @property
    def inference_source(self) -> KeyframeSource:
        return replace(self.training_source, offset=self.inference_offset)

    @property
    def tag(self) -> str:
        return slug(self.name)

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> 'Variant':
        """把配置中的 keyframe_source / key_decoder / audio_guidance 组合成一个变体。"""
        source = KeyframeSource.parse(config.keyframe_source)
        key_decoder = config.key_decoder
        if source.kind == 'baseline-extracted':
            key_decoder = 'baseline-extracted'
        train_source = 'phoneme' if source.kind != 'uniform' else str(source)
        name = str(source) if key_decoder == 'learned' else 'baseline-extracted'
        if not config.audio_guidance:
            name += '+no-audio'
        return cls(name, train_source, key_decoder, config.audio_guidance, source.offset)


def slug(text: str) -> str:
    return re.sub(r'[^A-Za-z0-9]+', '-', text).strip('-').lower() or 'variant'


@dataclass
class VariantScore:
    variant: str
    seed: int
    report: MetricReport
    key_count: float
    key_proportion: float

    def row(self) -> Dict:
        return {'variant': self.variant, 'seed': self.seed, 'lve': self.report.lve, 'fdd': self.report.fdd,
                'mve': self.report.mve, 'key_count': self.key_count, 'key_proportion': self.key_proportion}


@dataclass
class RunResult:
    run_dir: Path
    config_hash: str
    results: pd.DataFrame
    by_seed: pd.DataFrame


class ExperimentRunner:
    """
    按配置执行训练与评测，并缓存已训练模型。

    Args:
        config: 实验配置
        run_dir: 输出目录，默认 config.output_dir
        progress: 可选回调 (label, current, total, **stats)
    """

    def __init__(self, config: ExperimentConfig, run_dir: Optional[Union[str, Path]] = None,
                 progress: Optional[ProgressFn] = None):
        self.config = config
        self.config_hash = config_hash(config)
        self.run_dir = Path(run_dir or config.output_dir)
        self.progress = progress
        self._corpus: Optional[Corpus] = None
        self._dims: Optional[ModelDims] = None
        self._models: Dict[Tuple, torch.nn.Module] = {}

    @contextmanager
    def stage(self, name: str):
        try:
            yield
        except StageFailedError:
            raise
        except (ValidationError, RuntimeError) as e:
            logger.error("stage %s failed (config %s): %s", name, self.config_hash, e)
            raise StageFailedError(name, self.config_hash, e) from e

    def _callback(self, label: str):
        if self.progress is None:
            return None
        return lambda current, total, **stats: self.progress(label, current, total, **stats)

    # ---------------------------------------------------------------- 数据

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            with self.stage('generate-data'):
                if self.config.corpus_dir:
                    self._corpus = load_corpus(self.config.corpus_dir, self._callback('load-corpus'))
                else:
                    self._corpus = generate_corpus(self.config.corpus, self._callback('generate-data'))
                if not self._corpus.splits.get('test'):
                    raise ValidationError("corpus has an empty test split")
                self._write_run_header()
        return self._corpus

    @property
    def dims(self) -> ModelDims:
        if self._dims is None:
            self._dims = self.config.model.dims_for(self.corpus)
        return self._dims

    def _write_run_header(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        dump_json({'config_hash': self.config_hash, 'config': self.config.to_dict()},
                  self.run_dir / 'config.json')
        save_mesh(self._corpus.mesh, self.run_dir / 'mesh.kmtf')
        gt_dir = self.run_dir / 'gt'
        gt_dir.mkdir(exist_ok=True)
        for sample in self._corpus.split('test'):
            save_motion(sample.motion, gt_dir / f"{sample.sample_id}.kmtf", sample.speaker)

    def seed_dir(self, seed: int) -> Path:
        path = self.run_dir / f"seed_{seed}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _training_config(self, seed: int) -> TrainingConfig:
        return replace(self.config.training, seed=seed)

    def speaker_of(self, sample: CorpusSample) -> Optional[int]:
        return sample.speaker.id if self.dims.speaker_count > 0 else None

    # ---------------------------------------------------------------- 训练

    def _finish(self, key: Tuple, name: str, seed: int, result: TrainResult) -> torch.nn.Module:
        out = self.seed_dir(seed)
        meta = {'config_hash': self.config_hash, 'seed': seed, 'best_epoch': result.best_epoch,
                'corpus_seed': self.config.corpus.seed}
        save_model(result.model, out / f"{name}.kmtf", meta)
        log = result.loss_log.copy()
        log.insert(0, 'model', name)
        write_csv(log, out / f"{name}_loss.csv", self.config_hash)
        self._models[key] = result.model
        return result.model

    def baseline(self, seed: int) -> DirectBaseline:
        key = ('baseline', seed)
        if key not in self._models:
            with self.stage('train-baseline'):
                result = train_direct_baseline(self.corpus, self._training_config(seed), self.dims,
                                               model_seed=child_seeds(seed, 3)[0],
                                               progress_callback=self._callback(f"baseline/seed {seed}"))
                self._finish(key, 'baseline', seed, result)
        return self._models[key]

    def lkma(self, seed: int, keyframe_source: str = 'phoneme') -> LkmaModel:
        key = ('lkma', seed, keyframe_source)
        if key not in self._models:
            with self.stage('train-lkma'):
                model = LkmaModel(self.dims)
                ParamStore(model, child_seeds(seed, 3)[1]).initialize()
                result = train_lkma(model, self.corpus, self._training_config(seed), self.config.weights,
                                    KeyframeSource.parse(keyframe_source),
                                    progress_callback=self._callback(f"lkma {keyframe_source}/seed {seed}"))
                self._finish(key, f"lkma_{slug(keyframe_source)}", seed, result)
        return self._models[key]

    def cmc(self, seed: int, keyframe_source: str = 'phoneme', audio_guidance: bool = True,
            on_baseline: bool = False) -> CmcModel:
        key = ('cmc', seed, keyframe_source, audio_guidance, on_baseline)
        if key not in self._models:
            baseline = self.baseline(seed) if on_baseline else None
            frozen = self.config.cmc_audio_encoder == 'frozen-lkma'
            lkma_model = self.lkma(seed, keyframe_source) if frozen else None
            with self.stage('train-cmc'):
                model = CmcModel(self.dims, audio_guidance, self.config.cmc_audio_encoder)
                ParamStore(model, child_seeds(seed, 3)[2]).initialize()
                if lkma_model is not None:
                    model.load_audio_encoder(lkma_model.audio_encoder)
                label = f"cmc {keyframe_source}{'' if audio_guidance else ' no-audio'}" \
                        f"{' on-baseline' if on_baseline else ''}/seed {seed}"
                result = train_cmc(model, self.corpus, self._training_config(seed),
                                   KeyframeSource.parse(keyframe_source), baseline=baseline,
                                   progress_callback=self._callback(label))
                name = f"cmc_{slug(keyframe_source)}"
                name += '' if audio_guidance else '_no-audio'
                name += '_on-baseline' if on_baseline else ''
                self._finish(key, name, seed, result)
        return self._models[key]

    def models_for(self, variant: Variant, seed: int):
        """
        按变体取出（必要时训练）推理需要的模型。

        CMC 推理时的音频特征来自同一种子的 LKMA 编码器，所以基线关键运动变体同样需要 LKMA。
        """
        if variant.baseline_only:
            return None, None, self.baseline(seed)
        baseline = self.baseline(seed) if variant.key_decoder == 'baseline-extracted' else None
        lkma_model = self.lkma(seed, variant.keyframe_source)
        on_baseline = baseline is not None and self.config.retrain_cmc_on_baseline
        cmc_model = self.cmc(seed, variant.keyframe_source, variant.audio_guidance, on_baseline)
        return lkma_model, cmc_model, baseline

    # ---------------------------------------------------------------- 推理与评测

    def predict(self, variant: Variant, seed: int,
                sample: CorpusSample) -> Tuple[MotionSequence, Optional[KeyMotionSet]]:
        lkma_model, cmc_model, baseline = self.models_for(variant, seed)
        features = torch.as_tensor(np.asarray(sample.audio.features), dtype=torch.float32)
        speaker = self.speaker_of(sample)
        fps, mesh_ref = sample.motion.fps, sample.motion.mesh_ref
        baseline_pred = predict_baseline(baseline, features, fps, mesh_ref, speaker) if baseline else None
        if variant.baseline_only:
            return baseline_pred, None

        indices = variant.inference_source.indices_for(sample)
        if variant.key_decoder == 'learned':
            key = predict_key_motions(lkma_model, features, indices, speaker)
        else:
            key = extract_key_from_baseline(baseline_pred, indices)
        frames = complete_motion(cmc_model, features, key, speaker, audio_encoder=lkma_model.audio_encoder)
        return MotionSequence(frames=frames.astype(np.float32), fps=fps, mesh_ref=mesh_ref), key

    def evaluate(self, variant: Variant, seed: int, save_predictions: bool = False) -> VariantScore:
        """在测试集上推理并评测一个变体。"""
        with self.stage(f"evaluate {variant.name}"):
            self.models_for(variant, seed)
            samples = self.corpus.split('test')
            pred_dir = self.seed_dir(seed) / 'predictions' / variant.tag
            pairs, counts, proportions = [], [], []
            for sample in samples:
                pred, key = self.predict(variant, seed, sample)
                pairs.append((sample.sample_id, pred, sample.motion))
                if key is not None:
                    counts.append(key.m)
                    proportions.append(key.m / key.n_frames)
                if save_predictions:
                    save_motion(pred, pred_dir / f"{sample.sample_id}.kmtf", sample.speaker)
                    if key is not None:
                        save_key_motions(key, pred_dir / 'keys' / f"{sample.sample_id}.kmtf",
                                         pred.fps, pred.mesh_ref)
            report = evaluate_corpus(pairs, self.corpus.mesh, squared=self.config.lve_squared,
                                     variance=self.config.fdd_variance,
                                     meta={'variant': variant.name, 'seed': seed,
                                           'config_hash': self.config_hash})
            write_report(report, self.seed_dir(seed) / 'reports', self.config_hash, prefix=f"{variant.tag}_")
        score = VariantScore(variant.name, seed, report,
                             float(np.mean(counts)) if counts else 0.0,
                             float(np.mean(proportions)) if proportions else 0.0)
        logger.info("%s seed %d: LVE %.6g, FDD %.6g", variant.name, seed, report.lve, report.fdd)
        return score

    def evaluate_all(self, variants: Sequence[Variant], save_for: Sequence[str] = ()) -> List[VariantScore]:
        scores = []
        total = len(variants) * len(self.config.seeds)
        for seed in self.config.seeds:
            for variant in variants:
                scores.append(self.evaluate(variant, seed, save_predictions=variant.name in save_for))
                if self.progress:
                    self.progress('variants', len(scores), total, variant=variant.name)
        return scores

    def write_results(self, scores: Sequence[VariantScore]) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """写 results_by_seed.csv 与按变体平均的 results.csv。"""
        by_seed = pd.DataFrame([s.row() for s in scores], columns=['variant', 'seed'] + RESULT_COLUMNS[1:])
        order = list(dict.fromkeys(by_seed['variant']))
        results = (by_seed.drop(columns='seed').groupby('variant', sort=False).mean()
                   .reindex(order).reset_index())
        results['seeds'] = len(self.config.seeds)
        write_csv(by_seed, self.run_dir / 'results_by_seed.csv', self.config_hash)
        write_csv(results, self.run_dir / 'results.csv', self.config_hash)
        return results, by_seed


def run_experiment(config: ExperimentConfig, run_dir: Optional[Union[str, Path]] = None,
                   progress: Optional[ProgressFn] = None) -> RunResult:
    """
    端到端运行一个配置：配置对应的变体加上直接回归基线两行结果。

    Returns:
        RunResult(run_dir, config_hash, results, by_seed)

    Raises:
        StageFailedError: 任一阶段失败
    """
    runner = ExperimentRunner(config, run_dir, progress)
    variant = Variant.from_config(config)
    variants = [variant, Variant(BASELINE_VARIANT, baseline_only=True)]
    scores = runner.evaluate_all(variants, save_for=(variant.name,))
    results, by_seed = runner.write_results(scores)
    logger.info("experiment %s written to %s", runner.config_hash, runner.run_dir)
    return RunResult(runner.run_dir, runner.config_hash, results, by_seed)
