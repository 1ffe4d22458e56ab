"""音频前端模块"""
from .frontend import (AudioSource, AudioClip, SegmentationError, featurize, locate_key_frames,
                       uniform_sample_indices, offset_indices, segment_long_audio, ENERGY_FLOOR)
from .alignment import (alignment_from_dict, alignment_to_dict, load_alignment, save_alignment,
                        textgrid_to_alignment)

__all__ = ['AudioSource', 'AudioClip', 'SegmentationError', 'featurize', 'locate_key_frames',
           'uniform_sample_indices', 'offset_indices', 'segment_long_audio', 'ENERGY_FLOOR',
           'alignment_from_dict', 'alignment_to_dict', 'load_alignment', 'save_alignment',
           'textgrid_to_alignment']
