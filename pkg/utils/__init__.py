"""工具函数模块"""
from .text_utils import sanitize_text, sanitize_label, ensure_json_safe, dump_json, load_json
from .numeric import round_half_up, seconds_to_frame, frame_count, child_seeds

__all__ = ['sanitize_text', 'sanitize_label', 'ensure_json_safe', 'dump_json', 'load_json',
           'round_half_up', 'seconds_to_frame', 'frame_count', 'child_seeds']
