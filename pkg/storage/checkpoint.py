"""
模型检查点：参数张量写入 KMTF 容器，结构信息写入同名 .schema.json

schema 字段：
    kind            模型类型（lkma / cmc / baseline）
    hyperparameters 重建模型所需的维度与开关
    layers          [{"name": 参数名, "shape": [...]}]，按模块遍历顺序
    meta            附加信息（config_hash、epoch、seed 等）
"""
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from models import ValidationError
from neural.params import ParamStore
from storage.container import read_tensor_container, records_to_dict, write_tensor_container
from utils.text_utils import dump_json, load_json

PathLike = Union[str, Path]


def schema_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + '.schema.json')


def save_checkpoint(params: ParamStore, path: PathLike, kind: str, hyperparameters: Dict,
                    meta: Optional[Dict] = None) -> None:
    """写检查点；同一组参数与元数据得到逐字节相同的文件。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tensor_container(params.to_records(), path)
    dump_json({
        'kind': kind,
        'hyperparameters': hyperparameters,
        'layers': [{'name': name, 'shape': list(shape)} for name, shape in params.shapes().items()],
        'meta': meta or {},
    }, schema_path(path))


def read_checkpoint(path: PathLike, kind: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], Dict]:
    """
    读检查点，返回 (参数数组, schema)。

    Raises:
        ValidationError: schema 缺失、类型不符或张量与 schema 不一致
    """
    path = Path(path)
    if not schema_path(path).exists():
        raise ValidationError(f"checkpoint {path} has no schema file {schema_path(path).name}")
    schema = load_json(schema_path(path))
    if kind is not None and schema.get('kind') != kind:
        raise ValidationError(f"checkpoint {path} holds a {schema.get('kind')!r} model, expected {kind!r}")
    arrays = records_to_dict(read_tensor_container(path))
    for layer in schema.get('layers', []):
        name = layer['name']
        if name not in arrays:
            raise ValidationError(f"checkpoint {path} is missing tensor {name}")
        if list(arrays[name].shape) != list(layer['shape']):
            raise ValidationError(f"checkpoint {path}: tensor {name} has shape {arrays[name].shape}, "
                                  f"schema says {layer['shape']}")
    return arrays, schema
