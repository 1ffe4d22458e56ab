"""
参考运行基线：把消融判定、训练收敛比与推理耗时按 config_hash 合并进 baselines.json。

文件结构：
    {"<config_hash>": {"ablation": {...}, "timing": {...}}}

重复记录同一 config_hash 的同一部分时覆盖旧值，其余部分保持不变。
"""
import logging
import math
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd

from experiments.ablation import AblationResult
from models import ValidationError
from utils.text_utils import dump_json, load_json

logger = logging.getLogger(__name__)

BASELINE_FILE = 'baselines.json'
SECTIONS = ('ablation', 'timing')
# 尚未有参考运行时文件里只有这一条说明
PENDING_KEY = 'pending'


def _number(value) -> Optional[float]:
    value = float(value)
    return value if math.isfinite(value) else None


def convergence_ratios(run_dir: Union[str, Path]) -> Dict[str, float]:
    """每个 seed_*/<model>_loss.csv 的末轮验证 L_rec 与首轮之比，键为 seed_<s>/<model>。"""
    ratios = {}
    for path in sorted(Path(run_dir).glob('seed_*/*_loss.csv')):
        log = pd.read_csv(path, dtype={'config_hash': str})
        val = log[log['split'] == 'val']
        if val.empty or not val['L_rec'].iloc[0] > 0:
            continue
        model = path.stem[:-len('_loss')]
        ratios[f"{path.parent.name}/{model}"] = _number(val['L_rec'].iloc[-1] / val['L_rec'].iloc[0])
    return ratios


def ablation_entry(result: AblationResult, elapsed_s: float) -> Dict:
    comparison = {row['variant']: {'lve': _number(row['lve']), 'fdd': _number(row['fdd'])}
                  for row in result.comparison.to_dict('records')}
    return {
        'elapsed_s': _number(elapsed_s),
        'all_passed': bool(result.all_passed),
        'verdicts': {v.criterion: {'passed': bool(v.passed), 'value': _number(v.value),
                                   'reference': _number(v.reference),
                                   'ratio': _number(v.value / v.reference) if v.reference else None}
                     for v in result.verdicts},
        'variants': comparison,
        'convergence': convergence_ratios(result.run_dir),
    }


def timing_entry(table: pd.DataFrame, clip_seconds: float) -> Dict:
    stages = {row['stage']: {'mean_s': _number(row['mean_s']), 'p95_s': _number(row['p95_s']),
                             'count': int(row['count'])}
              for row in table.to_dict('records')}
    return {'mean_clip_seconds': _number(clip_seconds), 'stages': stages}


def record_baseline(path: Union[str, Path], config_hash: str, section: str, entry: Dict) -> Path:
    """
    把一部分基线写入 path（不存在则新建）。

    Raises:
        ValidationError: section 不是 ablation / timing，或已有文件不是 JSON 对象
    """
    if section not in SECTIONS:
        raise ValidationError(f"baseline section must be one of {SECTIONS}, got {section!r}")
    path = Path(path)
    data = load_json(path) if path.exists() else {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path} does not hold a JSON object")
    data.pop(PENDING_KEY, None)
    data.setdefault(config_hash, {})[section] = entry
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(data, path)
    logger.info("recorded %s baseline for config %s in %s", section, config_hash, path)
    return path
