import numpy as np
import pytest

from data.processor import KeyframeSource, SampleProcessor
from data.synth import (CorpusConfig, SpeakerStyle, build_mesh_spec, build_viseme_table, generate_corpus,
                        generate_sequence)
from evaluation.metrics import lip_offset_curve
from models import SpeakerId, ValidationError
from utils.numeric import seconds_to_frame


def test_corpus_is_deterministic(tiny_corpus_config, tiny_corpus):
    assert generate_corpus(tiny_corpus_config) == tiny_corpus


def test_different_seed_changes_corpus(tiny_corpus_config, tiny_corpus):
    other = CorpusConfig(**{**tiny_corpus_config.__dict__, 'seed': tiny_corpus_config.seed + 1})
    assert generate_corpus(other) != tiny_corpus


def test_splits_are_contiguous(tiny_corpus):
    assert [len(tiny_corpus.split(n)) for n in ('train', 'val', 'test')] == [8, 1, 1]
    ids = [s.sample_id for s in tiny_corpus.samples]
    assert tiny_corpus.splits['train'] + tiny_corpus.splits['val'] + tiny_corpus.splits['test'] == ids


def test_audio_and_motion_are_frame_aligned(tiny_corpus):
    for sample in tiny_corpus.samples:
        assert sample.audio.n_frames == sample.motion.n_frames
        assert sample.audio.d == 8
        assert sample.motion.vertex_count == 30


def test_key_proportion(tiny_corpus):
    proportions = [s.key_indices().size / s.n_frames for s in tiny_corpus.samples]
    assert 0.2 <= float(np.mean(proportions)) <= 0.6


def test_lips_move_more_than_upper_face(tiny_corpus):
    mesh = tiny_corpus.mesh
    frames = np.concatenate([s.motion.frames for s in tiny_corpus.samples])
    lip = np.abs(frames[:, mesh.lip_vertices]).mean()
    upper = np.abs(frames[:, mesh.upper_face_vertices]).mean()
    assert lip > upper


def test_speakers_rotate(tiny_corpus):
    assert [s.speaker.id for s in tiny_corpus.samples[:4]] == [0, 1, 0, 1]
    assert tiny_corpus.speaker_count == 2


def test_config_validation():
    with pytest.raises(ValidationError):
        CorpusConfig(vertex_count=10)
    with pytest.raises(ValidationError):
        CorpusConfig(splits=(0.5, 0.5, 0.5))
    with pytest.raises(ValidationError):
        CorpusConfig(min_phones=5, max_phones=4)


def test_mesh_regions():
    mesh = build_mesh_spec(40)
    assert mesh.lip_vertices.size == 10 and mesh.upper_face_vertices.size == 10
    z = mesh.template_positions[:, 2]
    assert z[mesh.lip_vertices].max() <= z[mesh.upper_face_vertices].min()


def test_keyframe_source_parse():
    assert KeyframeSource.parse("uniform:4") == KeyframeSource('uniform', stride=4)
    assert str(KeyframeSource.parse("phoneme+offset:1")) == "phoneme+offset:+1"
    assert str(KeyframeSource.parse("phoneme")) == "phoneme"
    with pytest.raises(ValidationError):
        KeyframeSource.parse("random")
    with pytest.raises(ValidationError):
        KeyframeSource.parse("uniform:x")


def test_keyframe_source_indices(tiny_corpus):
    sample = tiny_corpus.samples[0]
    np.testing.assert_array_equal(KeyframeSource().indices_for(sample), sample.key_indices())
    uniform = KeyframeSource('uniform', stride=2).indices_for(sample)
    assert uniform[0] == 0 and uniform[-1] == sample.n_frames - 1


def test_processor_flags_inadmissible_transcripts(tiny_corpus_config, tiny_corpus):
    sample = generate_sequence(tiny_corpus_config, tiny_corpus.mesh, tiny_corpus.visemes, SpeakerId(0), seed=1,
                               phone_tokens=[0, 0, 0, 0], phone_durations=[0.04] * 4)
    processor = SampleProcessor()
    prepared = processor.prepare([sample, tiny_corpus.samples[0]])
    assert prepared[0].ctc_targets is None
    assert prepared[1].ctc_targets == tiny_corpus.samples[0].alignment.transcript_tokens
    assert processor.validation_errors == 1


def test_batches_are_reproducible(tiny_corpus):
    items = SampleProcessor(use_speakers=False).prepare(tiny_corpus.split('train'))
    order = lambda epoch: [i.sample_id for b in SampleProcessor.iterate_batches(items, 3, 5, epoch) for i in b]
    assert order(0) == order(0)
    assert sorted(order(1)) == sorted(i.sample_id for i in items)
    batches = list(SampleProcessor.iterate_batches(items, 3, 5, 0))
    assert [len(b) for b in batches] == [3, 3, 2]
    assert items[0].speaker is None


@pytest.fixture(scope="module")
def default_corpus():
    return generate_corpus(CorpusConfig(n_sequences=20))


def _event_frames(sample):
    """音素边界与中点对应的帧。"""
    fps, n = sample.motion.fps, sample.n_frames
    mids = [seconds_to_frame(0.5 * (p.start + p.end), fps) for p in sample.alignment.phones]
    return np.unique(np.clip(np.concatenate([sample.key_indices(), mids]), 0, n - 1))


def test_lip_curve_extrema_sit_on_phone_events(default_corpus):
    near, total = 0, 0
    for sample in default_corpus.samples:
        curve = lip_offset_curve(sample.motion, default_corpus.mesh)
        step = np.diff(curve)
        extrema = np.flatnonzero(step[:-1] * step[1:] < 0) + 1
        events = _event_frames(sample)
        for k in extrema:
            near += int(np.abs(events - k).min() <= 1)
        total += extrema.size
    assert total > 0
    assert near / total >= 0.9


def test_boundary_and_midpoint_interpolation(default_corpus):
    ratios = []
    for sample in default_corpus.samples:
        frames = sample.motion.frames.astype(np.float64)
        knots = np.unique(np.concatenate([_event_frames(sample), [0, sample.n_frames - 1]]))
        flat = frames.reshape(sample.n_frames, -1)
        recon = np.stack([np.interp(np.arange(sample.n_frames), knots, flat[knots, j])
                          for j in range(flat.shape[1])], axis=1)
        ratios.append(np.sqrt(np.mean((recon - flat) ** 2)) / np.sqrt(np.mean(flat ** 2)))
    assert np.mean(ratios) < 0.15


def test_phone_features_match_their_signature():
    corpus = generate_corpus(CorpusConfig(n_sequences=10, noise=0.3))
    signatures = corpus.visemes.signatures.astype(np.float64)
    unit = signatures / np.linalg.norm(signatures, axis=1, keepdims=True)
    checked = 0
    for sample in corpus.samples:
        times = np.arange(sample.n_frames) / sample.motion.fps
        features = np.asarray(sample.audio.features, dtype=np.float64)
        for phone, token in zip(sample.alignment.phones, sample.alignment.transcript_tokens):
            inside = (times >= phone.start) & (times < phone.end)
            if not inside.any():
                continue
            mean = features[inside].mean(axis=0)
            assert int(np.argmax(unit @ (mean / np.linalg.norm(mean)))) == token
            checked += 1
    assert checked > 0


def test_single_phone_without_noise():
    config = CorpusConfig(noise=0.0, vertex_count=40, feature_dim=8)
    mesh = build_mesh_spec(40)
    visemes = build_viseme_table(mesh, config.vocabulary_size, config.feature_dim)
    style = SpeakerStyle(amplitude=1.0, vertex_weights=np.ones(40))
    sample = generate_sequence(config, mesh, visemes, SpeakerId(0), seed=0, style=style,
                               phone_tokens=[3], phone_durations=[0.4])
    features = np.asarray(sample.audio.features)
    assert sample.n_frames == 10
    np.testing.assert_array_equal(features, np.broadcast_to(features[0], features.shape))
    np.testing.assert_allclose(features[0], visemes.signatures[3])

    frames = sample.motion.frames
    np.testing.assert_array_equal(frames[0], 0.0)
    np.testing.assert_allclose(frames[5], visemes.keyposes[3], atol=1e-6)
    curve = lip_offset_curve(sample.motion, mesh)
    assert int(np.argmax(curve)) == 5
    assert np.all(np.diff(curve[:6]) >= 0) and np.all(np.diff(curve[5:]) <= 0)


def test_speakers_are_balanced_per_split():
    corpus = generate_corpus(CorpusConfig(n_sequences=23, speaker_count=4, vertex_count=30, feature_dim=4,
                                          vocabulary_size=6, min_phones=3, max_phones=4))
    for name in ('train', 'val', 'test'):
        counts = np.bincount([s.speaker.id for s in corpus.split(name)], minlength=4)
        assert counts.max() - counts.min() <= 1, name
