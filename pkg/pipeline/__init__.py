"""两阶段生成流程：LKMA、CMC、直接回归基线、训练与推理"""
from .components import ModelDims, AudioEncoder, MotionDecoder
from .lkma import (LkmaModel, LossWeights, LossComponents, encode_audio, select_key_features,
                   decode_key_motions, pseudo_complete, build_pseudo_complete, loss_rec, loss_vel,
                   loss_lat, loss_ctc_text, lkma_total_loss, lkma_losses, predict_key_motions)
from .cmc import (CmcModel, MotionFlowFeatures, encode_motion_flow, gated_fuse, decode_motion,
                  cmc_forward, cmc_encode_audio, extract_key_from_baseline)
from .baseline import DirectBaseline, predict_baseline
from .training import (TrainingConfig, TrainResult, TrainingDivergedError, run_training, train_lkma,
                       train_cmc, train_direct_baseline, cmc_losses, baseline_losses, LOSS_LOG_COLUMNS)
from .inference import infer_full, infer_clip, complete_motion
from .persistence import save_model, load_model, build_model, checkpoint_meta

__all__ = ['ModelDims', 'AudioEncoder', 'MotionDecoder', 'LkmaModel', 'LossWeights', 'LossComponents',
           'encode_audio', 'select_key_features', 'decode_key_motions', 'pseudo_complete',
           'build_pseudo_complete', 'loss_rec', 'loss_vel', 'loss_lat', 'loss_ctc_text', 'lkma_total_loss',
           'lkma_losses', 'predict_key_motions', 'CmcModel', 'MotionFlowFeatures', 'encode_motion_flow',
           'gated_fuse', 'decode_motion', 'cmc_forward', 'cmc_encode_audio', 'extract_key_from_baseline',
           'DirectBaseline', 'predict_baseline', 'TrainingConfig', 'TrainResult', 'TrainingDivergedError',
           'run_training', 'train_lkma', 'train_cmc', 'train_direct_baseline', 'cmc_losses',
           'baseline_losses', 'LOSS_LOG_COLUMNS', 'infer_full', 'infer_clip', 'complete_motion',
           'save_model', 'load_model', 'build_model', 'checkpoint_meta']
