import re
import json
import math
import numpy as np
import pandas as pd


def sanitize_text(text):
    """清理音素标签或标识符文本：去除控制字符、折叠空白。"""
    if text is None or (np.isscalar(text) and pd.isna(text)):
        return ""

    text_str = str(text)
    text_str = re.sub(r'[\x00-\x08\x0b-\x0c\x0e-\x1f\x7f-\x9f]', '', text_str)
    text_str = re.sub(r'\s+', ' ', text_str)
    text_str = text_str.encode('utf-8', errors='ignore').decode('utf-8')
    return text_str.strip()


def sanitize_label(label) -> str:
    """音素标签不允许包含空白，空白替换为下划线。"""
    return sanitize_text(label).replace(' ', '_')


def ensure_json_safe(obj):
    """
    把 sidecar 元数据转换为可 JSON 序列化的纯 Python 对象。

    numpy 标量/数组会被展开；非有限浮点数会被拒绝（sidecar 中的标量
    必须可以原样读回）。
    """
    if isinstance(obj, dict):
        return {sanitize_text(k): ensure_json_safe(v) for k, v in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [ensure_json_safe(item) for item in obj]
    elif isinstance(obj, np.ndarray):
        return ensure_json_safe(obj.tolist())
    elif isinstance(obj, np.generic):
        return ensure_json_safe(obj.item())
    elif isinstance(obj, str):
        return sanitize_text(obj)
    elif isinstance(obj, bool) or obj is None:
        return obj
    elif isinstance(obj, int):
        return obj
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite value {obj!r} cannot be stored in a sidecar")
        return obj
    else:
        return sanitize_text(str(obj))


def dump_json(obj, path) -> None:
    """以固定格式写 JSON（排序键、UTF-8），保证重复写入字节一致。"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(ensure_json_safe(obj), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write('\n')


def load_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
