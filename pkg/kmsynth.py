"""
kmsynth 命令行入口

子命令：generate-data, train-lkma, train-cmc, train-baseline, infer, evaluate,
run, ablate, timing, export-obj, plot。错误退出码 2，判定未全部通过退出码 1。
"""
import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch
from tqdm import tqdm

from audio.alignment import load_alignment, textgrid_to_alignment
from audio.frontend import AudioSource
from data.processor import KeyframeSource
from data.synth import DEFAULT_VOCABULARY, Corpus, generate_corpus
from evaluation.metrics import load_mask_file
from evaluation.report import evaluate_corpus, motion_pairs_from_dirs, write_csv, write_report
from experiments.ablation import run_ablation_suite
from experiments.baselines import ablation_entry, record_baseline, timing_entry
from experiments.config import ExperimentConfig, config_hash, load_config
from experiments.plots import emit_plots
from experiments.runner import run_experiment
from experiments.timing import run_timing, untrained_models
from models import ValidationError
from models.motion import speaker_or_none
from neural import ParamStore
from pipeline.cmc import CmcModel
from pipeline.inference import infer_full
from pipeline.lkma import LkmaModel
from pipeline.persistence import load_model, save_model
from pipeline.training import train_cmc, train_direct_baseline, train_lkma
from storage.corpus_store import load_corpus, save_corpus
from storage.obj_export import export_obj_sequence
from storage.serialize import load_audio, load_mesh, load_motion, save_motion
from utils.numeric import child_seeds
from utils.text_utils import load_json

BAR_FORMAT = "{l_bar}{bar}| {n_fmt}/{total_fmt} [{elapsed}<{remaining}, {rate_fmt}]"


def make_bar(total: int, desc: str, unit: str) -> tqdm:
    return tqdm(total=total, desc=desc, unit=unit, bar_format=BAR_FORMAT)


class ProgressBars:
    """把 (label, current, total, **stats) 形式的进度回调映射到按 label 区分的 tqdm 进度条。"""

    UNITS = {'generate-data': '条', 'load-corpus': '条', 'variants': '个'}

    def __init__(self):
        self.bars: Dict[str, tqdm] = {}

    def __call__(self, label: str, current: int, total: int, **stats):
        bar = self.bars.get(label)
        if bar is None:
            bar = self.bars[label] = make_bar(total, label, self.UNITS.get(label, 'epoch'))
        bar.update(current - bar.n)
        if stats:
            bar.set_postfix_str(", ".join(f"{k}={_fmt(v)}" for k, v in stats.items()))
        if current >= total:
            bar.close()
            del self.bars[label]


def _fmt(value) -> str:
    return f"{value:.4g}" if isinstance(value, float) else str(value)


# ---------------------------------------------------------------------- 配置


def effective_config(args) -> ExperimentConfig:
    """读取 --config 并应用命令行覆盖项。"""
    config = load_config(getattr(args, 'config', None))
    if getattr(args, 'fps', None):
        config.corpus = replace(config.corpus, fps=args.fps)
    if getattr(args, 'faithful_depth', False):
        config.model.faithful_depth = True
    if getattr(args, 'lve_norm', False):
        config.lve_squared = False
    if getattr(args, 'fdd_variance', False):
        config.fdd_variance = True
    if getattr(args, 'epochs', None):
        config.training = replace(config.training, epochs=args.epochs)
    if getattr(args, 'seed', None) is not None:
        config.seeds = [args.seed]
    if getattr(args, 'corpus', None):
        config.corpus_dir = str(args.corpus)
    return config


def print_config(config: ExperimentConfig) -> str:
    digest = config_hash(config)
    print(f"  配置哈希: {digest}")
    print(f"  种子: {', '.join(str(s) for s in config.seeds)}")
    print(f"  帧率: {config.fps:g} fps")
    return digest


def loss_log_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(f"{checkpoint.stem}_loss.csv")


# ---------------------------------------------------------------------- 子命令


def cmd_generate_data(args) -> int:
    config = effective_config(args)
    out = Path(args.out)
    print(f"\n正在生成合成语料...")
    print_config(config)
    print(f"  序列数: {config.corpus.n_sequences}")
    print(f"  顶点数: {config.corpus.vertex_count}")
    print(f"  说话人数: {config.corpus.speaker_count}")

    start = time.time()
    pbar = make_bar(config.corpus.n_sequences, "生成进度", "条")
    corpus = generate_corpus(config.corpus, progress_callback=lambda current, total: pbar.update(1))
    pbar.close()
    gen_time = time.time() - start

    pbar = make_bar(len(corpus), "写入进度", "条")
    save_corpus(corpus, out, progress_callback=lambda current, total: pbar.update(1))
    pbar.close()

    frames = [s.n_frames for s in corpus.samples]
    proportions = [s.key_indices().size / s.n_frames for s in corpus.samples]
    print(f"\n语料生成完成!")
    print(f"   - 划分: {', '.join(f'{k}={len(v)}' for k, v in corpus.splits.items())}")
    print(f"   - 帧数范围: {min(frames)}–{max(frames)}")
    print(f"   - 平均关键帧比例: {np.mean(proportions):.1%}")
    print(f"   - 输出目录: {out}")
    print(f"   - 生成耗时: {gen_time:.2f} 秒")
    print()
    return 0


def _load_corpus(path) -> Corpus:
    print(f"\n正在加载语料: {path}")
    start = time.time()
    corpus = load_corpus(path)
    print(f"语料加载完成!")
    print(f"   - 序列数: {len(corpus):,}")
    print(f"   - 划分: {', '.join(f'{k}={len(v)}' for k, v in corpus.splits.items())}")
    print(f"   - 加载耗时: {time.time() - start:.2f} 秒")
    return corpus


def _finish_training(result, out: Path, digest: str, seed: int, extra: Optional[Dict] = None) -> None:
    save_model(result.model, out, {'config_hash': digest, 'seed': seed, 'best_epoch': result.best_epoch,
                                   **(extra or {})})
    write_csv(result.loss_log, loss_log_path(out), digest)
    print(f"\n训练完成!")
    print(f"   - 最佳轮次: {result.best_epoch}")
    print(f"   - 最佳验证损失: {result.best_val:.6g}")
    print(f"   - 检查点: {out}")
    print(f"   - 损失日志: {loss_log_path(out)}")


def cmd_train(args) -> int:
    config = effective_config(args)
    corpus = _load_corpus(args.corpus)
    dims = config.model.dims_for(corpus)
    seed = config.seeds[0]
    training = replace(config.training, seed=seed)
    baseline_seed, lkma_seed, cmc_seed = child_seeds(seed, 3)
    out = Path(args.out)

    print(f"\n正在训练 {args.kind} 模型...")
    digest = print_config(config)
    print(f"  轮数: {training.epochs}")
    print(f"  学习率: {training.lr:g}")
    print(f"  批大小: {training.batch_size}")

    start = time.time()
    pbar = make_bar(training.epochs, "训练进度", "epoch")

    def progress_callback(current, total, train_loss=0.0, val_loss=0.0):
        pbar.update(1)
        pbar.set_postfix_str(f"train {train_loss:.4g}, val {val_loss:.4g}")

    extra = {'corpus': str(args.corpus)}
    if args.kind == 'lkma':
        source = KeyframeSource.parse(args.keyframe_source or config.keyframe_source)
        if source.kind == 'baseline-extracted':
            source = KeyframeSource()
        model = LkmaModel(dims)
        ParamStore(model, lkma_seed).initialize()
        result = train_lkma(model, corpus, training, config.weights, source, progress_callback)
        extra['keyframe_source'] = str(source)
    elif args.kind == 'cmc':
        source = KeyframeSource.parse(args.keyframe_source or config.keyframe_source)
        audio_guidance = config.audio_guidance and not args.no_audio
        model = CmcModel(dims, audio_guidance, config.cmc_audio_encoder)
        ParamStore(model, cmc_seed).initialize()
        if config.cmc_audio_encoder == 'frozen-lkma':
            if not args.lkma:
                raise ValidationError("cmc_audio_encoder 'frozen-lkma' needs --lkma")
            model.load_audio_encoder(load_model(args.lkma, 'lkma').audio_encoder)
        baseline = load_model(args.baseline, 'baseline') if args.baseline else None
        result = train_cmc(model, corpus, training, source, baseline, progress_callback)
        extra.update({'keyframe_source': str(source), 'audio_guidance': audio_guidance,
                      'on_baseline': baseline is not None})
    else:
        result = train_direct_baseline(corpus, training, dims, baseline_seed,
                                       progress_callback=progress_callback)
    pbar.close()
    _finish_training(result, out, digest, seed, extra)
    print(f"   - 训练耗时: {time.time() - start:.2f} 秒")
    print()
    return 0


def _vocabulary(path: Optional[str]) -> Dict[str, int]:
    labels = load_json(path) if path else list(DEFAULT_VOCABULARY)
    return {label: i for i, label in enumerate(labels)}


def cmd_infer(args) -> int:
    config = effective_config(args)
    fps = args.fps or config.fps
    print(f"\n正在加载模型...")
    lkma_model, cmc_model = load_model(args.lkma, 'lkma'), load_model(args.cmc, 'cmc')
    print(f"  LKMA: {args.lkma}")
    print(f"  CMC: {args.cmc}")

    audio_path = Path(args.audio)
    source = (AudioSource.from_wav(audio_path) if audio_path.suffix.lower() == '.wav'
              else AudioSource.from_features(load_audio(audio_path)))
    align_path = Path(args.alignment)
    if align_path.suffix.lower() == '.textgrid':
        alignment = textgrid_to_alignment(align_path, _vocabulary(args.vocabulary), duration=source.duration)
    else:
        alignment = load_alignment(align_path)
    keyframe_source = KeyframeSource.parse(args.keyframe_source)
    if keyframe_source.kind == 'baseline-extracted':
        raise ValidationError("infer uses LKMA key motions; choose phoneme, uniform:k or phoneme+offset:δ")

    print(f"\n正在推理...")
    print(f"  音频时长: {source.duration:.2f} 秒")
    print(f"  音素数: {len(alignment.phones)}")
    start = time.time()
    seq = infer_full(lkma_model, cmc_model, source, alignment, fps, args.speaker,
                     max_clip_seconds=args.max_clip_seconds, mesh_ref=args.mesh_ref,
                     keyframe_source=keyframe_source)
    speaker = speaker_or_none(args.speaker)
    save_motion(seq, args.out, speaker)
    print(f"推理完成!")
    print(f"   - 输出帧数: {seq.n_frames}")
    print(f"   - 输出文件: {args.out}")
    print(f"   - 推理耗时: {time.time() - start:.2f} 秒")
    print()
    return 0


def cmd_evaluate(args) -> int:
    config = effective_config(args)
    digest = config_hash(config)
    print(f"\n正在评测: {args.pred} vs {args.gt}")
    start = time.time()
    pairs = motion_pairs_from_dirs(args.pred, args.gt)
    mesh = load_mesh(args.mesh)
    regions = load_mask_file(args.mask, mesh.vertex_count) if args.mask else mesh
    report = evaluate_corpus(pairs, regions, squared=config.lve_squared, variance=config.fdd_variance,
                             meta={'pred': str(args.pred), 'gt': str(args.gt)})
    paths = write_report(report, args.out, digest)
    unit = 'mm²' if config.lve_squared else 'mm'
    print(f"评测完成!")
    print(f"   - 序列数: {len(pairs)}")
    print(f"   - LVE: {report.lve:.6g} {unit}")
    print(f"   - FDD: {report.fdd:.6g} mm")
    print(f"   - MVE: {report.mve:.6g} mm")
    print(f"   - 报告: {', '.join(str(p) for p in paths.values())}")
    print(f"   - 评测耗时: {time.time() - start:.2f} 秒")
    print()
    return 0


def _print_results(results) -> None:
    for row in results.itertuples(index=False):
        print(f"   - {row.variant:<22} LVE {row.lve:.6g}  FDD {row.fdd:.6g}  关键帧 {row.key_count:.1f}")


def cmd_run(args) -> int:
    config = effective_config(args)
    run_dir = Path(args.out or config.output_dir)
    print(f"\n正在运行实验: {run_dir}")
    print_config(config)
    start = time.time()
    result = run_experiment(config, run_dir, ProgressBars())
    print(f"\n实验完成!")
    _print_results(result.results)
    print(f"   - 结果: {result.run_dir / 'results.csv'}")
    print(f"   - 总耗时: {time.time() - start:.2f} 秒")
    print()
    return 0


def cmd_ablate(args) -> int:
    config = effective_config(args)
    run_dir = Path(args.out or config.output_dir)
    print(f"\n正在运行消融套件: {run_dir}")
    print_config(config)
    start = time.time()
    result = run_ablation_suite(config, run_dir, ProgressBars())
    print(f"\n消融实验完成!")
    _print_results(result.comparison)
    print(f"\n排序判定:")
    for v in result.verdicts:
        mark = '通过' if v.passed else '未通过'
        detail = f" ({v.detail})" if v.detail else ""
        print(f"   - {v.criterion} [{mark}] {v.description}: {v.value:.6g} vs {v.reference:.6g}{detail}")
    elapsed = time.time() - start
    if args.baseline_file:
        path = record_baseline(args.baseline_file, result.config_hash, 'ablation', ablation_entry(result, elapsed))
        print(f"\n  基线已记录: {path}")
    print(f"\n  总耗时: {elapsed:.2f} 秒")
    print()
    return 0 if result.all_passed else 1


def cmd_timing(args) -> int:
    config = effective_config(args)
    corpus = _load_corpus(config.corpus_dir) if config.corpus_dir else generate_corpus(config.corpus)
    samples = corpus.split('test')[:args.limit] if args.limit else corpus.split('test')
    if args.lkma and args.cmc:
        lkma_model, cmc_model = load_model(args.lkma, 'lkma'), load_model(args.cmc, 'cmc')
    else:
        print("未指定检查点，使用随机初始化的模型计时")
        lkma_model, cmc_model = untrained_models(config.model.dims_for(corpus), config.seeds[0])

    print(f"\n正在计时...")
    print(f"  片段数: {len(samples)}")
    print(f"  重复次数: {args.repeats}")
    pbar = make_bar(len(samples) * args.repeats, "计时进度", "段")
    table = run_timing(lkma_model, cmc_model, samples, args.repeats, config.max_clip_seconds,
                       progress_callback=lambda current, total: pbar.update(1))
    pbar.close()
    out = write_csv(table, Path(args.out) / 'timing.csv')
    if args.baseline_file:
        clip_seconds = float(np.mean([s.alignment.audio_duration for s in samples]))
        record_baseline(args.baseline_file, config_hash(config), 'timing', timing_entry(table, clip_seconds))
    print(f"\n计时完成!")
    for row in table.itertuples(index=False):
        print(f"   - {row.stage:<10} 平均 {row.mean_s:.4f} 秒  p95 {row.p95_s:.4f} 秒")
    print(f"   - 输出: {out}")
    print()
    return 0


def cmd_export_obj(args) -> int:
    seq, _ = load_motion(args.motion)
    mesh = load_mesh(args.mesh)
    print(f"\n正在导出 OBJ 序列: {args.motion}")
    start = time.time()
    count = export_obj_sequence(seq, mesh, args.out)
    print(f"导出完成!")
    print(f"   - 文件数: {count:,}")
    print(f"   - 输出目录: {args.out}")
    print(f"   - 导出耗时: {time.time() - start:.2f} 秒")
    print()
    return 0


def cmd_plot(args) -> int:
    print(f"\n正在整理绘图数据: {args.run_dir}")
    written = emit_plots(args.run_dir, args.out)
    print(f"完成!")
    for name, path in written.items():
        print(f"   - {name}: {path}")
    print()
    return 0


# ---------------------------------------------------------------------- 参数解析


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='kmsynth', description="speech-driven 3D facial animation toolkit")
    parser.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help="logging level")
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p, metrics=False):
        p.add_argument('--config', help="experiment config JSON")
        p.add_argument('--fps', type=float, help="frame rate override")
        p.add_argument('--seed', type=int, help="single seed override")
        p.add_argument('--faithful-depth', action='store_true', help="use the full-depth layer plan")
        if metrics:
            p.add_argument('--lve-norm', action='store_true', help="unsquared lip vertex error")
            p.add_argument('--fdd-variance', action='store_true', help="variance instead of std in FDD")
        return p

    p = with_config(sub.add_parser('generate-data', help="generate a synthetic corpus"))
    p.add_argument('--out', required=True, help="corpus directory")
    p.set_defaults(func=cmd_generate_data)

    for kind in ('lkma', 'cmc', 'baseline'):
        p = with_config(sub.add_parser(f"train-{kind}", help=f"train the {kind} model"))
        p.add_argument('--corpus', required=True, help="corpus directory")
        p.add_argument('--out', required=True, help="checkpoint path (.kmtf)")
        p.add_argument('--epochs', type=int, help="epoch count override")
        if kind in ('lkma', 'cmc'):
            p.add_argument('--keyframe-source', help="phoneme | uniform:k | phoneme+offset:δ")
        if kind == 'cmc':
            p.add_argument('--no-audio', action='store_true', help="disable audio guidance")
            p.add_argument('--lkma', help="LKMA checkpoint (frozen-lkma audio encoder)")
            p.add_argument('--baseline', help="baseline checkpoint; train on its key motions")
        p.set_defaults(func=cmd_train, kind=kind)

    p = with_config(sub.add_parser('infer', help="audio + alignment → motion"))
    p.add_argument('--lkma', required=True)
    p.add_argument('--cmc', required=True)
    p.add_argument('--audio', required=True, help="WAV file or feature file (.kmtf)")
    p.add_argument('--alignment', required=True, help="alignment JSON or TextGrid")
    p.add_argument('--vocabulary', help="JSON list of phone labels for TextGrid input")
    p.add_argument('--speaker', type=int)
    p.add_argument('--max-clip-seconds', type=float)
    p.add_argument('--keyframe-source', default='phoneme')
    p.add_argument('--mesh-ref', default='synthface')
    p.add_argument('--out', required=True, help="output motion file (.kmtf)")
    p.set_defaults(func=cmd_infer)

    p = with_config(sub.add_parser('evaluate', help="LVE/FDD over motion directories"), metrics=True)
    p.add_argument('--pred', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--mesh', required=True, help="mesh file (.kmtf)")
    p.add_argument('--mask', help="JSON mask file overriding mesh regions")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_evaluate)

    for name, func, text in (('run', cmd_run, "run one experiment end to end"),
                             ('ablate', cmd_ablate, "run the ablation suite")):
        p = with_config(sub.add_parser(name, help=text), metrics=True)
        p.add_argument('--corpus', help="use an existing corpus directory")
        p.add_argument('--epochs', type=int, help="epoch count override")
        p.add_argument('--out', help="run directory (default: config output_dir)")
        if name == 'ablate':
            p.add_argument('--baseline-file', help="merge verdicts, ratios and timings into this JSON file")
        p.set_defaults(func=func)

    p = with_config(sub.add_parser('timing', help="per-stage inference timing"))
    p.add_argument('--corpus', help="corpus directory (default: generate from config)")
    p.add_argument('--lkma')
    p.add_argument('--cmc')
    p.add_argument('--limit', type=int, help="number of test clips")
    p.add_argument('--repeats', type=int, default=1)
    p.add_argument('--baseline-file', help="merge stage timings into this JSON file")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser('export-obj', help="motion file → OBJ sequence")
    p.add_argument('--motion', required=True)
    p.add_argument('--mesh', required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_export_obj)

    p = sub.add_parser('plot', help="loss/lip-curve/heatmap CSVs from a run directory")
    p.add_argument('run_dir')
    p.add_argument('--out', help="output directory (default: <run_dir>/plots)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    torch.use_deterministic_algorithms(True, warn_only=True)
    total_start = time.time()
    try:
        code = args.func(args)
    except (ValidationError, RuntimeError, OSError) as e:
        print(f"\n错误: {e}", file=sys.stderr)
        return 2
    logging.getLogger(__name__).info("%s finished in %.2f s", args.command, time.time() - total_start)
    return code


if __name__ == "__main__":
    sys.exit(main())
