"""神经网络基础模块：可微分算子、网络层、参数存储、Adam、CTC 与梯度校验"""
from .functional import (ShapeError, AttentionParams, linear, multihead_attention,
                         sinusoidal_pe, conv1d, feed_forward)
from .layers import (Linear, Embedding, MultiheadAttention, FeedForward, Conv1d,
                     EncoderBlock, DecoderBlock, EncoderStack)
from .params import ParamStore
from .optim import OptimizerState, NonFiniteGradientError, adam_step, collect_grads
from .ctc import ctc_loss, min_ctc_length, CTCInadmissibleError
from .gradcheck import grad_check, NonDeterministicLossError

__all__ = ['ShapeError', 'AttentionParams', 'linear', 'multihead_attention', 'sinusoidal_pe',
           'conv1d', 'feed_forward', 'Linear', 'Embedding', 'MultiheadAttention', 'FeedForward', 'Conv1d',
           'EncoderBlock', 'DecoderBlock', 'EncoderStack', 'ParamStore', 'OptimizerState',
           'NonFiniteGradientError', 'adam_step', 'collect_grads', 'ctc_loss', 'min_ctc_length',
           'CTCInadmissibleError', 'grad_check', 'NonDeterministicLossError']
