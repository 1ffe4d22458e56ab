"""测试共用的小规模语料、网格与模型维度"""
import numpy as np
import pytest
import torch

from data.synth import CorpusConfig, generate_corpus
from models import MeshSpec
from pipeline.components import ModelDims


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_corpus_config():
    return CorpusConfig(n_sequences=10, vertex_count=30, feature_dim=8, vocabulary_size=6,
                        min_phones=4, max_phones=6, speaker_count=2, seed=3)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_corpus_config):
    return generate_corpus(tiny_corpus_config)


@pytest.fixture
def small_mesh():
    """V=12：前 3 个顶点为唇部，后 3 个为上半脸。"""
    template = np.arange(36, dtype=np.float32).reshape(12, 3)
    return MeshSpec("tinyface", template, [0, 1, 2], [9, 10, 11])


@pytest.fixture
def tiny_dims():
    return ModelDims(feature_dim=6, d=8, f=8, vertex_count=12, vocab_size=5, speaker_count=2,
                     lip_vertices=(0, 1, 2), encoder_heads=2, decoder_heads=2, flow_heads=2,
                     depth=1, pe_dim=8)


@pytest.fixture
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield torch.float64
    torch.set_default_dtype(previous)
