"""评测模块：LVE/FDD 等指标与报告输出"""
from .metrics import (RegionMask, load_mask_file, lip_errors, lve, dynamics, fdd, error_map, mve,
                      lip_offset_curve, interp_reconstruct, rms)
from .report import (MetricReport, evaluate_corpus, motion_pairs_from_dirs, write_csv, write_report,
                     error_heatmap_frame, lip_curve_frame, FLOAT_FORMAT)

__all__ = ['RegionMask', 'load_mask_file', 'lip_errors', 'lve', 'dynamics', 'fdd', 'error_map', 'mve',
           'lip_offset_curve', 'interp_reconstruct', 'rms', 'MetricReport', 'evaluate_corpus',
           'motion_pairs_from_dirs', 'write_csv', 'write_report', 'error_heatmap_frame',
           'lip_curve_frame', 'FLOAT_FORMAT']
