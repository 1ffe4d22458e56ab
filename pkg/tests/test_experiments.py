from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from experiments import (SEED_ENV, StageTimer, Variant, config_from_dict, config_hash, curve_fit_table, emit_plots,
                         load_config, matched_uniform_indices, ordering_verdicts, run_experiment, run_timing,
                         untrained_models)
from experiments.ablation import BUDGET_TOLERANCE, SUITE_VARIANTS, IncompleteSuiteError, run_ablation_suite
from experiments.baselines import BASELINE_FILE, PENDING_KEY, ablation_entry, record_baseline, timing_entry
from experiments.runner import ExperimentRunner
from models import ValidationError
from utils.text_utils import load_json

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

TINY = {
    "corpus": {"n_sequences": 10, "vertex_count": 30, "feature_dim": 8, "vocabulary_size": 6,
               "min_phones": 4, "max_phones": 6, "speaker_count": 2},
    "model": {"d": 8, "f": 8, "depth": 1, "encoder_heads": 2, "decoder_heads": 2, "flow_heads": 2, "pe_dim": 8},
    "training": {"epochs": 1, "lr": 0.001},
    "seeds": [0],
}


def test_config_hash_is_stable():
    a, b = config_from_dict(TINY), config_from_dict(TINY)
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 12
    b.output_dir = "elsewhere"
    assert config_hash(a) == config_hash(b)
    b.seeds = [1]
    assert config_hash(a) != config_hash(b)


def test_unknown_config_keys():
    with pytest.raises(ValidationError):
        config_from_dict({"corpus": {"n_sequence": 3}})
    with pytest.raises(ValidationError):
        config_from_dict({"learning_rate": 1})
    with pytest.raises(ValidationError):
        config_from_dict({"keyframe_source": "random"})


def test_seed_env_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"seeds": [0, 1, 2]}', encoding="utf-8")
    assert load_config(path, environ={}).seeds == [0, 1, 2]
    assert load_config(path, environ={SEED_ENV: "7"}).seeds == [7]
    with pytest.raises(ValidationError):
        load_config(path, environ={SEED_ENV: "x"})


def test_shipped_configs_load():
    for name in ("desk", "tiny"):
        config = load_config(CONFIG_DIR / f"{name}.json", environ={})
        assert config.seeds


def test_variant_from_config():
    uniform = Variant.from_config(config_from_dict({"keyframe_source": "uniform:3"}))
    assert uniform.name == "uniform:3" and str(uniform.training_source) == "uniform:3"
    offset = Variant.from_config(config_from_dict({"keyframe_source": "phoneme+offset:1"}))
    assert str(offset.training_source) == "phoneme" and offset.inference_source.offset == 1
    extracted = Variant.from_config(config_from_dict({"keyframe_source": "baseline-extracted"}))
    assert extracted.key_decoder == "baseline-extracted"
    silent = Variant.from_config(config_from_dict({"audio_guidance": False}))
    assert silent.name == "phoneme+no-audio" and not silent.audio_guidance
    assert Variant("phoneme+offset:+1").tag == "phoneme-offset-1"
    with pytest.raises(ValidationError):
        Variant("bad", "baseline-extracted")


def test_matched_uniform_indices():
    np.testing.assert_array_equal(matched_uniform_indices(10, 4), [0, 3, 6, 9])
    np.testing.assert_array_equal(matched_uniform_indices(3, 10), [0, 1, 2])


def _means(**lve):
    counts = {'full': 10.0, 'uniform:3': 10.5}
    return {name: {'lve': value, 'key_count': counts.get(name, 10.0)} for name, value in lve.items()}


def _curves(wins, total=20):
    return pd.DataFrame({'phoneme_wins': [1] * wins + [0] * (total - wins)})


def test_ordering_verdicts_pass():
    means = _means(**{'full': 1.0, 'baseline': 1.2, 'uniform:3': 1.1, 'baseline-extracted': 1.1,
                      'no-audio': 1.2, 'phoneme+offset:+1': 1.05})
    verdicts = {v.criterion: v for v in ordering_verdicts(means, _curves(16))}
    assert all(v.passed for v in verdicts.values())
    assert set(verdicts) == {'AC-3', 'AC-4', 'AC-5', 'AC-6', 'AC-7', 'AC-8'}


def test_ordering_verdicts_fail():
    means = _means(**{'full': 1.0, 'baseline': 1.02, 'uniform:3': 0.9, 'baseline-extracted': 1.3,
                      'no-audio': 1.05, 'phoneme+offset:+1': 1.2})
    verdicts = ordering_verdicts(means, _curves(15))
    assert not any(v.passed for v in verdicts)


def test_budget_mismatch_fails_localization_verdict():
    means = _means(**{'full': 1.0, 'baseline': 1.2, 'uniform:3': 1.1, 'baseline-extracted': 1.1,
                      'no-audio': 1.2, 'phoneme+offset:+1': 1.0})
    means['uniform:3']['key_count'] = 10.0 * (1 + BUDGET_TOLERANCE) + 1
    verdicts = {v.criterion: v for v in ordering_verdicts(means, _curves(20))}
    assert not verdicts['AC-4'].passed


def test_curve_fit_table(tiny_corpus):
    table = curve_fit_table(tiny_corpus, limit=5)
    assert len(table) == 5
    assert table['seq_id'].iloc[0] == tiny_corpus.split('test')[0].sample_id
    assert (table['rms_phoneme'] >= 0).all()


def test_stage_timer():
    timer = StageTimer()
    for _ in range(3):
        with timer.stage('lkma'):
            pass
    table = timer.table()
    assert list(table['stage']) == ['lkma']
    assert table['count'].iloc[0] == 3


def test_run_timing(tiny_corpus):
    config = config_from_dict(TINY)
    dims = config.model.dims_for(tiny_corpus)
    lkma, cmc = untrained_models(dims)
    table = run_timing(lkma, cmc, tiny_corpus.split('test'), repeats=2)
    assert list(table['stage']) == ['featurize', 'localize', 'lkma', 'cmc', 'total']
    assert (table['count'] == 2).all()


def test_plot_needs_outputs(tmp_path):
    with pytest.raises(ValidationError):
        emit_plots(tmp_path)


def test_run_is_reproducible(tmp_path):
    config = config_from_dict(TINY)
    first = run_experiment(config, tmp_path / "a")
    second = run_experiment(config, tmp_path / "b")
    assert list(first.results['variant']) == ['phoneme', 'baseline']
    for name in ("results.csv", "results_by_seed.csv", "seed_0/lkma_phoneme_loss.csv",
                 "seed_0/cmc_phoneme_loss.csv", "seed_0/baseline_loss.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    written = emit_plots(tmp_path / "a")
    curves = pd.read_csv(written['lip_curves'], dtype={'config_hash': str})
    assert set(curves['variant']) == {'phoneme'}
    assert curves['is_key'].isin([0, 1]).all()
    assert (curves['config_hash'] == first.config_hash).all()


def test_runner_caches_models(tmp_path):
    runner = ExperimentRunner(config_from_dict(TINY), tmp_path)
    assert runner.baseline(0) is runner.baseline(0)
    cmc = runner.cmc(0)
    lkma, cmc_again, baseline = runner.models_for(Variant('phoneme+offset:+1', inference_offset=1), 0)
    assert cmc_again is cmc and baseline is None
    lkma_for_baseline_keys, _, baseline = runner.models_for(
        Variant('baseline-extracted', key_decoder='baseline-extracted'), 0)
    assert lkma_for_baseline_keys is lkma and baseline is runner.baseline(0)
    assert (tmp_path / "gt").is_dir() and (tmp_path / "mesh.kmtf").exists()


def test_ablation_suite_writes_all_tables(tmp_path):
    result = run_ablation_suite(config_from_dict(TINY), tmp_path / "suite")
    assert set(result.comparison['variant']) == {v.name for v in SUITE_VARIANTS}
    for name in ('results.csv', 'key_quantity.csv', 'curve_fit.csv', 'verdicts.csv'):
        assert (result.run_dir / name).exists()
    verdicts = pd.read_csv(result.run_dir / 'verdicts.csv', dtype={'config_hash': str})
    assert list(verdicts['criterion']) == [v.criterion for v in result.verdicts]
    assert (verdicts['config_hash'] == result.config_hash).all()


def test_ablation_suite_rejects_missing_variants(tmp_path):
    with pytest.raises(IncompleteSuiteError):
        run_ablation_suite(config_from_dict(TINY), tmp_path / "partial", variants=SUITE_VARIANTS[:2])


def test_ablation_baseline_is_recorded(tmp_path):
    result = run_ablation_suite(config_from_dict(TINY), tmp_path / "suite")
    path = tmp_path / BASELINE_FILE
    path.write_text('{"pending": "not run yet"}', encoding="utf-8")
    record_baseline(path, result.config_hash, 'ablation', ablation_entry(result, 12.5))

    stored = load_json(path)
    assert PENDING_KEY not in stored
    entry = stored[result.config_hash]['ablation']
    assert entry['elapsed_s'] == 12.5 and entry['all_passed'] == result.all_passed
    assert set(entry['verdicts']) == {v.criterion for v in result.verdicts}
    for v in result.verdicts:
        assert entry['verdicts'][v.criterion]['passed'] == v.passed
    assert set(entry['variants']) == {v.name for v in SUITE_VARIANTS}
    # 单个 epoch：首轮与末轮是同一行
    assert 'seed_0/baseline' in entry['convergence']
    assert all(ratio == pytest.approx(1.0) for ratio in entry['convergence'].values())


def test_timing_baseline_merges_with_ablation(tmp_path):
    path = tmp_path / "nested" / BASELINE_FILE
    record_baseline(path, "abc123", 'ablation', {'all_passed': True})
    table = pd.DataFrame({'stage': ['lkma', 'total'], 'mean_s': [0.25, 0.5], 'p95_s': [0.3, float('nan')],
                          'count': [4, 4]})
    record_baseline(path, "abc123", 'timing', timing_entry(table, 4.0))

    stored = load_json(path)["abc123"]
    assert stored['ablation'] == {'all_passed': True}
    assert stored['timing']['mean_clip_seconds'] == 4.0
    assert stored['timing']['stages']['lkma'] == {'mean_s': 0.25, 'p95_s': 0.3, 'count': 4}
    assert stored['timing']['stages']['total']['p95_s'] is None
    with pytest.raises(ValidationError):
        record_baseline(path, "abc123", 'training', {})
