import numpy as np
import pytest
import torch

from audio import AudioSource
from data.processor import KeyframeSource
from models import AudioFeatureSequence, KeyMotionSet, MotionSequence, Phone, PhonemeAlignment, ValidationError
from neural import ParamStore, grad_check
from pipeline import (CmcModel, DirectBaseline, LkmaModel, LossComponents, LossWeights, ModelDims, TrainingConfig,
                      decode_key_motions, decode_motion, encode_audio, lkma_total_loss, loss_ctc_text,
                      loss_lat, loss_rec, loss_vel, select_key_features,
                      build_pseudo_complete, checkpoint_meta, cmc_encode_audio, cmc_forward, cmc_losses,
                      encode_motion_flow, extract_key_from_baseline, gated_fuse, infer_full, lkma_losses,
                      load_model, predict_baseline, predict_key_motions, pseudo_complete, save_model, train_cmc,
                      train_direct_baseline, train_lkma, complete_motion, LOSS_LOG_COLUMNS)

GRAD_TOLERANCE = 1e-3


@pytest.fixture
def grad_dims():
    return ModelDims(feature_dim=4, d=8, f=8, vertex_count=5, vocab_size=4, speaker_count=2,
                     lip_vertices=(0, 1), encoder_heads=2, decoder_heads=2, flow_heads=2, depth=1, pe_dim=8)


def _init(model, seed=0, dtype=torch.float64):
    model = model.to(dtype)
    ParamStore(model, seed).initialize()
    return model


def _grad_inputs(dims, n=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    features = torch.randn(n, dims.feature_dim, generator=g, dtype=torch.float64)
    gt = torch.randn(n, dims.vertex_count, 3, generator=g, dtype=torch.float64)
    return features, gt


def _trainable(model):
    names, params = zip(*[(n, p) for n, p in model.named_parameters() if p.requires_grad])
    return list(params), list(names)


def test_lkma_total_loss_gradients(grad_dims):
    model = _init(LkmaModel(grad_dims))
    features, gt = _grad_inputs(grad_dims)
    weights = LossWeights()
    params, names = _trainable(model)

    def loss():
        return lkma_losses(model, features, gt, [0, 2, 5], [1, 2], weights, speaker=1)[0]

    assert grad_check(loss, params, epsilon=1e-4, max_coords=8, names=names) < GRAD_TOLERANCE


def test_lkma_audio_memory_gradients(grad_dims):
    dims = ModelDims(**{**grad_dims.to_dict(), 'decoder_memory': 'audio'})
    model = _init(LkmaModel(dims), seed=1)
    features, gt = _grad_inputs(dims, seed=1)
    params, names = _trainable(model)

    def loss():
        return lkma_losses(model, features, gt, [1, 3, 4], None, LossWeights(), speaker=None)[0]

    assert grad_check(loss, params, epsilon=1e-4, max_coords=8, names=names) < GRAD_TOLERANCE


def test_cmc_loss_gradients(grad_dims):
    model = _init(CmcModel(grad_dims))
    features, gt = _grad_inputs(grad_dims, seed=2)
    indices = [0, 2, 5]
    keys = gt[indices].clone()
    params, names = _trainable(model)

    def loss():
        return cmc_losses(model, features, gt, indices, keys, speaker=0)[0]

    assert grad_check(loss, params, epsilon=1e-4, max_coords=8, names=names) < GRAD_TOLERANCE


def test_lkma_loss_components(grad_dims):
    model = _init(LkmaModel(grad_dims))
    features, gt = _grad_inputs(grad_dims)
    total, parts = lkma_losses(model, features, gt, [0, 5], [1], LossWeights(rec=1.0, vel=1.0, lat=0.0, ctc=0.0))
    assert float(parts.ctc) > 0 and float(parts.lat) > 0
    assert float(total) == pytest.approx(float(parts.rec + parts.vel))


def test_pseudo_complete_identity(rng):
    for _ in range(200):
        n = int(rng.integers(1, 11))
        gt = torch.as_tensor(rng.normal(size=(n, 4, 3)))
        m = int(rng.integers(1, n + 1))
        idx = np.sort(rng.choice(n, size=m, replace=False))
        y_p = pseudo_complete(gt, idx, gt[idx])
        assert torch.equal(y_p, gt)


def test_pseudo_complete_replaces_only_keys():
    gt = MotionSequence(np.zeros((4, 2, 3), dtype=np.float32), 25, "m")
    key = KeyMotionSet([1, 3], np.ones((2, 2, 3), dtype=np.float32), 4)
    frames = build_pseudo_complete(gt, key).frames
    np.testing.assert_array_equal(frames[[1, 3]], 1.0)
    np.testing.assert_array_equal(frames[[0, 2]], 0.0)


def test_gated_fusion_is_convex(rng):
    for _ in range(200):
        n, d = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        audio = torch.as_tensor(rng.normal(size=(n, d)))
        phi = torch.as_tensor(rng.normal(size=(n, d)))
        weight = torch.as_tensor(rng.normal(scale=3.0, size=(2 * d, d)))
        gate, z = gated_fuse(audio, phi, weight)
        assert bool(((gate >= 0) & (gate <= 1)).all())
        assert bool((z >= torch.minimum(audio, phi) - 1e-12).all())
        assert bool((z <= torch.maximum(audio, phi) + 1e-12).all())


def test_gated_fusion_shape_checks():
    with pytest.raises(ValidationError):
        gated_fuse(torch.zeros(3, 2), torch.zeros(4, 2), torch.zeros(4, 2))
    with pytest.raises(ValidationError):
        gated_fuse(torch.zeros(3, 2), torch.zeros(3, 2), torch.zeros(2, 2))


def test_arrangement_places_every_frame_once(tiny_dims, rng):
    flow = CmcModel(tiny_dims).flow_encoder
    for _ in range(200):
        n = int(rng.integers(1, 11))
        m = int(rng.integers(1, n + 1))
        idx = torch.as_tensor(np.sort(rng.choice(n, size=m, replace=False)))
        mask = torch.ones(n, dtype=torch.bool)
        mask[idx] = False
        comp = torch.nonzero(mask).reshape(-1)
        # 用 1 + 帧号标记 token，关键帧取正、非关键帧取负
        key_tokens = (idx.double() + 1).reshape(-1, 1).repeat(1, 2)
        nonkey_tokens = -(comp.double() + 1).reshape(-1, 1).repeat(1, 2)
        grid = flow.arrange(key_tokens, nonkey_tokens, idx, comp, n)
        expected = torch.arange(1, n + 1, dtype=torch.float64)
        expected[comp] = -expected[comp]
        assert torch.equal(grid[:, 0], expected)


def test_motion_flow_provenance(tiny_dims):
    model = _init(CmcModel(tiny_dims), dtype=torch.float32)
    key = KeyMotionSet([0, 4], np.zeros((2, 12, 3), dtype=np.float32), 7)
    flow = encode_motion_flow(model, key)
    assert tuple(flow.phi.shape) == (7, tiny_dims.d)
    np.testing.assert_array_equal(flow.key_rows, [0, 4])


def test_cmc_output_length(tiny_dims):
    model = _init(CmcModel(tiny_dims))
    n = 8
    features = torch.randn(n, tiny_dims.feature_dim, dtype=torch.float64)
    audio = cmc_encode_audio(model, features)
    for m in (1, n // 2, n):
        idx = np.linspace(0, n - 1, m).round().astype(np.int64)
        keys = torch.randn(m, tiny_dims.vertex_count, 3, dtype=torch.float64)
        out = cmc_forward(model, audio, idx, keys)
        assert tuple(out.shape) == (n, tiny_dims.vertex_count, 3)


def test_cmc_rejects_bad_keys(tiny_dims):
    model = _init(CmcModel(tiny_dims))
    audio = torch.zeros(5, tiny_dims.d, dtype=torch.float64)
    keys = torch.zeros(2, tiny_dims.vertex_count, 3, dtype=torch.float64)
    with pytest.raises(ValidationError):
        cmc_forward(model, audio, [3, 1], keys)
    with pytest.raises(ValidationError):
        cmc_forward(model, audio, [], keys[:0])
    with pytest.raises(ValidationError):
        cmc_forward(model, audio, [1, 9], keys)


def test_no_audio_guidance_ignores_audio(tiny_dims):
    model = _init(CmcModel(tiny_dims, audio_guidance=False))
    keys = torch.randn(2, tiny_dims.vertex_count, 3, dtype=torch.float64)
    a = cmc_forward(model, torch.randn(6, tiny_dims.d, dtype=torch.float64), [0, 5], keys)
    b = cmc_forward(model, torch.randn(6, tiny_dims.d, dtype=torch.float64), [0, 5], keys)
    assert torch.equal(a, b)


def test_frozen_lkma_encoder(tiny_dims):
    lkma = _init(LkmaModel(tiny_dims), seed=3, dtype=torch.float32)
    cmc = _init(CmcModel(tiny_dims, audio_encoder_mode='frozen-lkma'), seed=4, dtype=torch.float32)
    cmc.load_audio_encoder(lkma.audio_encoder)
    assert not any(name.startswith('audio_encoder.') for name in cmc.trainable_names())
    assert all(torch.equal(a, b) for a, b in zip(cmc.audio_encoder.parameters(), lkma.audio_encoder.parameters()))


def test_unknown_speaker(tiny_dims):
    model = _init(DirectBaseline(tiny_dims), dtype=torch.float32)
    with pytest.raises(ValidationError):
        model(torch.zeros(3, tiny_dims.feature_dim), speaker=5)


def test_baseline_extracted_keys(tiny_dims):
    model = _init(DirectBaseline(tiny_dims), dtype=torch.float32)
    pred = predict_baseline(model, torch.randn(6, tiny_dims.feature_dim), 25.0, "m", speaker=0)
    key = extract_key_from_baseline(pred, [0, 2, 5])
    assert key.m == 3 and key.n_frames == 6
    np.testing.assert_array_equal(key.motions, pred.frames[[0, 2, 5]])


def test_model_round_trip(tmp_path, tiny_dims):
    for model in (LkmaModel(tiny_dims), CmcModel(tiny_dims, audio_encoder_mode='frozen-lkma'),
                  DirectBaseline(tiny_dims)):
        ParamStore(model, 5).initialize()
        path = tmp_path / f"{model.KIND}.kmtf"
        save_model(model, path, meta={'seed': 5})
        loaded = load_model(path, model.KIND)
        assert ParamStore(loaded).equals(ParamStore(model))
        assert checkpoint_meta(path) == {'seed': 5}
    with pytest.raises(ValidationError):
        load_model(tmp_path / "lkma.kmtf", "cmc")


def test_checkpoints_are_byte_identical(tmp_path, tiny_dims):
    for name in ("a", "b"):
        model = LkmaModel(tiny_dims)
        ParamStore(model, 9).initialize()
        save_model(model, tmp_path / f"{name}.kmtf")
    assert (tmp_path / "a.kmtf").read_bytes() == (tmp_path / "b.kmtf").read_bytes()


def _long_input(dims, n_phones=10, phone_seconds=0.2, fps=25.0):
    phones = tuple(Phone("AA", round(i * phone_seconds, 10), round((i + 1) * phone_seconds, 10))
                   for i in range(n_phones))
    duration = round(n_phones * phone_seconds, 10)
    alignment = PhonemeAlignment(phones, (0,) * n_phones, duration)
    n = int(round(duration * fps))
    features = AudioFeatureSequence(np.random.default_rng(0).normal(size=(n, dims.feature_dim)), fps)
    return AudioSource.from_features(features), alignment, n


def test_infer_full_conserves_frames(tiny_dims):
    lkma = _init(LkmaModel(tiny_dims), 1, torch.float32)
    cmc = _init(CmcModel(tiny_dims), 2, torch.float32)
    source, alignment, n = _long_input(tiny_dims)
    whole = infer_full(lkma, cmc, source, alignment, speaker=0, mesh_ref="tinyface")
    clipped = infer_full(lkma, cmc, source, alignment, speaker=0, max_clip_seconds=0.5, mesh_ref="tinyface")
    assert whole.n_frames == clipped.n_frames == n
    assert whole.vertex_count == tiny_dims.vertex_count
    assert clipped.mesh_ref == "tinyface"


def test_infer_full_uniform_keys(tiny_dims):
    lkma = _init(LkmaModel(tiny_dims), 1, torch.float32)
    cmc = _init(CmcModel(tiny_dims), 2, torch.float32)
    source, alignment, n = _long_input(tiny_dims, n_phones=3)
    out = infer_full(lkma, cmc, source, alignment, keyframe_source=KeyframeSource('uniform', stride=4))
    assert out.n_frames == n


def test_predict_key_motions_shape(tiny_dims):
    lkma = _init(LkmaModel(tiny_dims), 1, torch.float32)
    key = predict_key_motions(lkma, torch.randn(9, tiny_dims.feature_dim), [0, 4, 8])
    assert key.motions.shape == (3, tiny_dims.vertex_count, 3) and key.n_frames == 9


@pytest.fixture(scope="module")
def corpus_dims(tiny_corpus):
    return ModelDims.for_corpus(tiny_corpus, d=8, f=8, encoder_heads=2, decoder_heads=2, flow_heads=2,
                                depth=1, pe_dim=8, speaker_count=tiny_corpus.speaker_count)


def test_training_is_reproducible(tiny_corpus, corpus_dims):
    config = TrainingConfig(epochs=2, lr=1e-3, seed=1)
    logs = []
    for _ in range(2):
        model = LkmaModel(corpus_dims)
        ParamStore(model, 0).initialize()
        logs.append(train_lkma(model, tiny_corpus, config).loss_log)
    assert list(logs[0].columns) == LOSS_LOG_COLUMNS
    assert logs[0].equals(logs[1])
    assert set(logs[0]['split']) == {'train', 'val'}


def test_cmc_and_baseline_training(tiny_corpus, corpus_dims):
    config = TrainingConfig(epochs=1, lr=1e-3)
    baseline = train_direct_baseline(tiny_corpus, config, corpus_dims, model_seed=0)
    assert (baseline.loss_log['L_lat'] == 0).all() and (baseline.loss_log['L_ctc'] == 0).all()
    model = CmcModel(corpus_dims)
    ParamStore(model, 0).initialize()
    result = train_cmc(model, tiny_corpus, config, KeyframeSource('baseline-extracted'),
                       baseline=baseline.model)
    assert result.best_epoch == 1
    with pytest.raises(ValidationError):
        train_cmc(model, tiny_corpus, config, KeyframeSource('baseline-extracted'))


def test_lkma_stages_shapes(grad_dims):
    model = _init(LkmaModel(grad_dims))
    features, _ = _grad_inputs(grad_dims, n=7)
    audio = encode_audio(model, features, speaker=0)
    assert audio.shape == (7, grad_dims.d)
    key_features = select_key_features(audio, [1, 4, 6])
    assert torch.equal(key_features[1], audio[4])
    keys = decode_key_motions(model, key_features, [1, 4, 6])
    assert keys.shape == (3, grad_dims.vertex_count, 3)
    with pytest.raises(ValidationError):
        select_key_features(audio, [0, 7])
    with pytest.raises(ValidationError):
        decode_key_motions(model, key_features, [1, 4])
    with pytest.raises(ValidationError):
        decode_key_motions(model, key_features[:0], [])


def test_audio_memory_needs_audio(grad_dims):
    dims = ModelDims(**{**grad_dims.to_dict(), 'decoder_memory': 'audio'})
    model = _init(LkmaModel(dims))
    features, _ = _grad_inputs(dims)
    audio = encode_audio(model, features)
    with pytest.raises(ValidationError):
        decode_key_motions(model, select_key_features(audio, [0, 3]), [0, 3])
    assert decode_key_motions(model, select_key_features(audio, [0, 3]), [0, 3], audio).shape[0] == 2


def test_loss_terms():
    gt = torch.zeros(4, 2, 3, dtype=torch.float64)
    pred = gt.clone()
    pred[2] = 1.0
    assert float(loss_rec(pred, gt)) == pytest.approx(6 / 24)
    # velocity differs at steps 1→2 and 2→3
    assert float(loss_vel(pred, gt)) == pytest.approx(12 / 18)
    assert float(loss_vel(pred[:1], gt[:1])) == 0.0
    assert float(loss_lat(torch.ones(3, 2), torch.zeros(3, 2))) == 1.0
    with pytest.raises(ValidationError):
        loss_rec(pred[:3], gt)
    with pytest.raises(ValidationError):
        loss_lat(torch.ones(3, 2), torch.ones(2, 2))


def test_total_loss_is_weighted_sum():
    parts = LossComponents(*(torch.tensor(v, dtype=torch.float64) for v in (1.0, 2.0, 3.0, 4.0)))
    total = lkma_total_loss(LossWeights(), parts)
    assert float(total) == pytest.approx(1000 * 1.0 + 1000 * 2.0 + 1e-3 * 3.0 + 1e-4 * 4.0)


def test_text_loss_is_finite(grad_dims):
    model = _init(LkmaModel(grad_dims))
    _, gt = _grad_inputs(grad_dims, n=8)
    value = loss_ctc_text(model, gt, [1, 2, 3])
    assert torch.isfinite(value)
    assert float(value) > 0.0


def test_decode_motion_shape(grad_dims):
    model = _init(CmcModel(grad_dims))
    z = torch.randn(9, grad_dims.d, dtype=torch.float64)
    assert decode_motion(model, z).shape == (9, grad_dims.vertex_count, 3)


def _perturb(module, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn(p.shape, generator=g, dtype=p.dtype))


def test_joint_cmc_infers_with_lkma_encoder(tiny_dims):
    lkma = _init(LkmaModel(tiny_dims), 1, torch.float32)
    cmc = _init(CmcModel(tiny_dims), 2, torch.float32)
    source, alignment, _ = _long_input(tiny_dims, n_phones=4)
    before = infer_full(lkma, cmc, source, alignment, speaker=0)
    _perturb(cmc.audio_encoder, 7)
    after = infer_full(lkma, cmc, source, alignment, speaker=0)
    np.testing.assert_array_equal(before.frames, after.frames)


def test_complete_motion_uses_given_encoder(tiny_dims):
    lkma = _init(LkmaModel(tiny_dims), 1, torch.float32)
    cmc = _init(CmcModel(tiny_dims), 2, torch.float32)
    features = torch.randn(8, tiny_dims.feature_dim, generator=torch.Generator().manual_seed(0))
    key = predict_key_motions(lkma, features, [0, 3, 7], speaker=1)
    with_lkma = complete_motion(cmc, features, key, speaker=1, audio_encoder=lkma.audio_encoder)
    with torch.no_grad():
        expected = cmc_forward(cmc, lkma.audio_encoder(features, 1), key.indices,
                               torch.as_tensor(key.motions)).numpy()
    np.testing.assert_allclose(with_lkma, expected, rtol=1e-6, atol=1e-6)
    own = complete_motion(cmc, features, key, speaker=1)
    assert not np.allclose(with_lkma, own)
    _perturb(lkma.audio_encoder, 8)
    assert not np.allclose(complete_motion(cmc, features, key, speaker=1, audio_encoder=lkma.audio_encoder),
                           with_lkma)


def test_trained_cmc_output_depends_on_audio_guidance(tiny_corpus, corpus_dims):
    model = CmcModel(corpus_dims)
    ParamStore(model, 0).initialize()
    trained = train_cmc(model, tiny_corpus, TrainingConfig(epochs=1, lr=1e-3), KeyframeSource()).model
    sample = tiny_corpus.split('test')[0]
    features = torch.as_tensor(np.asarray(sample.audio.features), dtype=torch.float32)
    key = KeyMotionSet(sample.key_indices(), sample.motion.frames[sample.key_indices()], sample.n_frames)
    full = complete_motion(trained, features, key)
    trained.audio_guidance = False
    no_audio = complete_motion(trained, features, key)
    assert full.shape == no_audio.shape
    assert not np.allclose(full, no_audio)
