"""模型检查点的保存与重建"""
from pathlib import Path
from typing import Dict, Optional, Union

from torch import nn

from models import ValidationError
from neural import ParamStore
from pipeline.baseline import DirectBaseline
from pipeline.cmc import CmcModel
from pipeline.components import ModelDims
from pipeline.lkma import LkmaModel
from storage.checkpoint import read_checkpoint, save_checkpoint

MODEL_KINDS = {cls.KIND: cls for cls in (LkmaModel, CmcModel, DirectBaseline)}


def build_model(kind: str, hyperparameters: Dict) -> nn.Module:
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}")
    params = dict(hyperparameters)
    dims = ModelDims.from_dict(params.pop('dims'))
    return MODEL_KINDS[kind](dims, **params)


def save_model(model: nn.Module, path: Union[str, Path], meta: Optional[Dict] = None) -> None:
    save_checkpoint(ParamStore(model), path, model.KIND, model.hyperparameters(), meta)


def load_model(path: Union[str, Path], kind: Optional[str] = None) -> nn.Module:
    """按 schema 重建模型并载入参数；CMC 在 frozen-lkma 模式下仍冻结音频编码器。"""
    arrays, schema = read_checkpoint(path, kind)
    model = build_model(schema['kind'], schema['hyperparameters'])
    ParamStore(model).load_records(arrays)
    if isinstance(model, CmcModel) and model.audio_encoder_mode == 'frozen-lkma':
        for p in model.audio_encoder.parameters():
            p.requires_grad_(False)
    return model


def checkpoint_meta(path: Union[str, Path]) -> Dict:
    return read_checkpoint(path)[1].get('meta', {})
