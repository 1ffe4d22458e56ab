"""合成语料与样本处理模块"""
from .synth import (CorpusConfig, VisemeTable, SpeakerStyle, CorpusSample, Corpus, DEFAULT_VOCABULARY,
                    build_mesh_spec, build_viseme_table, build_speaker_styles, generate_sequence,
                    generate_corpus, smoothstep)
from .processor import KeyframeSource, PreparedSample, SampleProcessor

__all__ = ['CorpusConfig', 'VisemeTable', 'SpeakerStyle', 'CorpusSample', 'Corpus', 'DEFAULT_VOCABULARY',
           'build_mesh_spec', 'build_viseme_table', 'build_speaker_styles', 'generate_sequence',
           'generate_corpus', 'smoothstep', 'KeyframeSource', 'PreparedSample', 'SampleProcessor']
