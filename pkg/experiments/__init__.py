"""实验编排：配置、端到端运行、消融套件、计时与绘图数据"""
from .config import ExperimentConfig, ModelSection, load_config, config_from_dict, config_hash, SEED_ENV
from .runner import (ExperimentRunner, Variant, VariantScore, RunResult, StageFailedError, run_experiment,
                     RESULT_COLUMNS)
from .ablation import (SUITE_VARIANTS, AblationResult, Verdict, IncompleteSuiteError, run_ablation_suite,
                       ordering_verdicts, curve_fit_table, matched_uniform_indices)
from .timing import StageTimer, run_timing, untrained_models, STAGES
from .baselines import BASELINE_FILE, record_baseline, ablation_entry, timing_entry, convergence_ratios
from .plots import emit_plots

__all__ = ['ExperimentConfig', 'ModelSection', 'load_config', 'config_from_dict', 'config_hash', 'SEED_ENV',
           'ExperimentRunner', 'Variant', 'VariantScore', 'RunResult', 'StageFailedError', 'run_experiment',
           'RESULT_COLUMNS', 'SUITE_VARIANTS', 'AblationResult', 'Verdict', 'IncompleteSuiteError',
           'run_ablation_suite', 'ordering_verdicts', 'curve_fit_table', 'matched_uniform_indices',
           'StageTimer', 'run_timing', 'untrained_models', 'STAGES', 'emit_plots', 'BASELINE_FILE', 'record_baseline',
           'ablation_entry', 'timing_entry', 'convergence_ratios']
