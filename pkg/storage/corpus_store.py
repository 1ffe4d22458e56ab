"""
语料目录的读写

目录结构：
    <dir>/corpus.json            词表、划分、生成配置
    <dir>/mesh.kmtf (+ .json)     模板网格
    <dir>/visemes.kmtf            视素表（可选，仅合成语料）
    <dir>/samples/<id>/audio.kmtf, motion.kmtf, alignment.json, meta.json
"""
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Union

from audio.alignment import load_alignment, save_alignment
from data.synth import Corpus, CorpusConfig, CorpusSample, VisemeTable
from models import SpeakerId, TensorRecord, ValidationError
from storage.container import ContainerError, read_tensor_container, records_to_dict, write_tensor_container
from storage.serialize import load_audio, load_mesh, load_motion, save_audio, save_mesh, save_motion
from utils.text_utils import dump_json, load_json

logger = logging.getLogger(__name__)

SAMPLE_FILES = ('audio.kmtf', 'motion.kmtf', 'alignment.json', 'meta.json')


class CorpusLoadError(ValidationError):
    """语料目录缺文件或内容不合法"""
    pass


def save_corpus(corpus: Corpus, out_dir: Union[str, Path], progress_callback=None) -> None:
    """把语料写入目录，已有同名文件会被覆盖。"""
    out_dir = Path(out_dir)
    (out_dir / 'samples').mkdir(parents=True, exist_ok=True)
    split_of = {sid: name for name, ids in corpus.splits.items() for sid in ids}

    dump_json({
        'vocabulary': list(corpus.vocabulary),
        'splits': corpus.splits,
        'config': None if corpus.config is None else asdict(corpus.config),
    }, out_dir / 'corpus.json')
    save_mesh(corpus.mesh, out_dir / 'mesh.kmtf')
    if corpus.visemes is not None:
        write_tensor_container([TensorRecord.from_array('keyposes', corpus.visemes.keyposes),
                                TensorRecord.from_array('signatures', corpus.visemes.signatures)],
                               out_dir / 'visemes.kmtf')

    for i, sample in enumerate(corpus.samples):
        sample_dir = out_dir / 'samples' / sample.sample_id
        sample_dir.mkdir(exist_ok=True)
        save_audio(sample.audio, sample_dir / 'audio.kmtf', corpus.mesh.name, sample.speaker)
        save_motion(sample.motion, sample_dir / 'motion.kmtf', sample.speaker)
        save_alignment(sample.alignment, sample_dir / 'alignment.json')
        dump_json({'sample_id': sample.sample_id, 'speaker': sample.speaker.id,
                   'split': split_of.get(sample.sample_id), 'n_frames': sample.n_frames},
                  sample_dir / 'meta.json')
        if progress_callback:
            progress_callback(i + 1, len(corpus.samples))
    logger.info("saved corpus of %d samples to %s", len(corpus), out_dir)


def _load_sample(sample_dir: Path) -> CorpusSample:
    missing = [name for name in SAMPLE_FILES if not (sample_dir / name).exists()]
    if missing:
        raise CorpusLoadError(f"sample {sample_dir.name}: missing {', '.join(missing)}")
    try:
        meta = load_json(sample_dir / 'meta.json')
        motion, _ = load_motion(sample_dir / 'motion.kmtf')
        return CorpusSample(sample_id=meta['sample_id'], audio=load_audio(sample_dir / 'audio.kmtf'),
                            motion=motion, alignment=load_alignment(sample_dir / 'alignment.json'),
                            speaker=SpeakerId(meta['speaker']))
    except (ValidationError, KeyError, ValueError) as e:
        raise CorpusLoadError(f"sample {sample_dir.name}: {e}") from e


def load_corpus(corpus_dir: Union[str, Path], progress_callback=None) -> Corpus:
    """
    读取 save_corpus 写出的目录。

    Raises:
        CorpusLoadError: 缺少文件或内容不合法，消息中包含样本名
    """
    corpus_dir = Path(corpus_dir)
    for name in ('corpus.json', 'mesh.kmtf'):
        if not (corpus_dir / name).exists():
            raise CorpusLoadError(f"{corpus_dir}: missing {name}")
    doc = load_json(corpus_dir / 'corpus.json')
    vocabulary = tuple(doc['vocabulary'])
    mesh = load_mesh(corpus_dir / 'mesh.kmtf')
    config = CorpusConfig(**{k: (tuple(v) if k == 'splits' else v) for k, v in doc['config'].items()}) \
        if doc.get('config') else None

    visemes = None
    if (corpus_dir / 'visemes.kmtf').exists():
        try:
            arrays = records_to_dict(read_tensor_container(corpus_dir / 'visemes.kmtf'))
        except ContainerError as e:
            raise CorpusLoadError(f"{corpus_dir}: bad viseme table: {e}") from e
        visemes = VisemeTable(vocabulary=vocabulary, keyposes=arrays['keyposes'],
                              signatures=arrays['signatures'], seed=config.seed if config else 0)

    sample_dirs = sorted(p for p in (corpus_dir / 'samples').iterdir() if p.is_dir()) \
        if (corpus_dir / 'samples').is_dir() else []
    samples = []
    for i, sample_dir in enumerate(sample_dirs):
        samples.append(_load_sample(sample_dir))
        if progress_callback:
            progress_callback(i + 1, len(sample_dirs))

    try:
        corpus = Corpus(samples=samples, mesh=mesh, vocabulary=vocabulary, visemes=visemes,
                        splits={k: list(v) for k, v in doc['splits'].items()}, config=config)
    except ValidationError as e:
        raise CorpusLoadError(f"{corpus_dir}: {e}") from e
    logger.info("loaded corpus of %d samples from %s", len(corpus), corpus_dir)
    return corpus
