import numpy as np
import pytest

from models import (AudioFeatureSequence, KeyMotionSet, MeshSpec, MotionSequence, Phone, PhonemeAlignment,
                    SpeakerId, ValidationError)
from models.tensor_record import TensorRecord


def test_mesh_regions_must_be_disjoint():
    template = np.zeros((6, 3))
    with pytest.raises(ValidationError):
        MeshSpec("m", template, [0, 1], [1, 2])


def test_mesh_region_out_of_range():
    with pytest.raises(ValidationError):
        MeshSpec("m", np.zeros((4, 3)), [0], [4])


def test_motion_frames_are_read_only():
    seq = MotionSequence(np.zeros((3, 4, 3), dtype=np.float32), 25, "m")
    with pytest.raises(ValueError):
        seq.frames[0, 0, 0] = 1.0
    assert seq.n_frames == 3 and seq.vertex_count == 4


def test_motion_rejects_bad_shape():
    with pytest.raises(ValidationError):
        MotionSequence(np.zeros((3, 4, 2)), 25, "m")
    with pytest.raises(ValidationError):
        MotionSequence(np.zeros((0, 4, 3)), 25, "m")


def test_audio_motion_frame_mismatch():
    audio = AudioFeatureSequence(np.zeros((5, 2)), 25)
    motion = MotionSequence(np.zeros((6, 4, 3)), 25, "m")
    with pytest.raises(ValidationError):
        audio.check_pair(motion)


def test_key_motion_set_complement():
    seq = MotionSequence(np.arange(5 * 2 * 3, dtype=np.float32).reshape(5, 2, 3), 25, "m")
    key = KeyMotionSet.from_sequence(seq, [0, 3])
    assert key.m == 2
    np.testing.assert_array_equal(key.complement, [1, 2, 4])
    np.testing.assert_array_equal(key.motions[1], seq.frames[3])


def test_key_motion_set_rejects_unsorted():
    with pytest.raises(ValidationError):
        KeyMotionSet([3, 1], np.zeros((2, 2, 3)), 5)


def test_alignment_rejects_overlap():
    with pytest.raises(ValidationError):
        PhonemeAlignment((Phone("a", 0.0, 0.2), Phone("b", 0.1, 0.3)), (0, 1), 0.4)


def test_alignment_boundaries_are_shared():
    alignment = PhonemeAlignment((Phone("a", 0.0, 0.2), Phone("b", 0.2, 0.4)), (0, 1), 0.4)
    assert alignment.boundaries() == (0.0, 0.2, 0.4)
    assert alignment.labels == ("a", "b")


def test_speaker_check():
    SpeakerId(1).check(2)
    with pytest.raises(ValidationError):
        SpeakerId(2).check(2)
    with pytest.raises(ValidationError):
        SpeakerId(-1)


def test_tensor_record_payload_size():
    with pytest.raises(ValidationError):
        TensorRecord("x", "float32", (2,), b"\x00" * 4)
    record = TensorRecord.from_array("ids", np.array([1, 2, 3]))
    assert record.dtype == "int64"
    np.testing.assert_array_equal(record.to_array(), [1, 2, 3])
