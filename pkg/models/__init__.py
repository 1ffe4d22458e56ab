"""领域类型定义模块"""
from .validation import ValidationError
from .motion import MeshSpec, MotionSequence, AudioFeatureSequence, KeyMotionSet, SpeakerId
from .alignment import Phone, PhonemeAlignment
from .tensor_record import TensorRecord

__all__ = ['ValidationError', 'MeshSpec', 'MotionSequence', 'AudioFeatureSequence',
           'KeyMotionSet', 'SpeakerId', 'Phone', 'PhonemeAlignment', 'TensorRecord']
