import numpy as np
import pytest

from models import KeyMotionSet, MotionSequence, SpeakerId, TensorRecord, ValidationError
from storage.container import (BadMagicError, DuplicateRecordError, TruncatedPayloadError, UnknownDtypeError,
                               decode_records, encode_records, read_tensor_container, records_to_dict,
                               write_tensor_container)
from storage.corpus_store import load_corpus, save_corpus
from storage.obj_export import export_obj_sequence
from storage.serialize import load_key_motions, load_mesh, load_motion, save_key_motions, save_mesh, save_motion


def _records():
    return [TensorRecord.from_array("weights", np.arange(6, dtype=np.float32).reshape(2, 3)),
            TensorRecord.from_array("indices", np.array([0, 4, 9])),
            TensorRecord.from_array("scalar", np.float32(1.5))]


def test_container_round_trip(tmp_path):
    path = tmp_path / "t.kmtf"
    write_tensor_container(_records(), path)
    arrays = records_to_dict(read_tensor_container(path))
    np.testing.assert_array_equal(arrays["weights"], np.arange(6).reshape(2, 3))
    assert arrays["indices"].dtype == np.int64
    assert arrays["scalar"].shape == ()
    assert not list(tmp_path.glob("*.tmp"))


def test_container_is_byte_identical(tmp_path):
    write_tensor_container(_records(), tmp_path / "a.kmtf")
    write_tensor_container(_records(), tmp_path / "b.kmtf")
    assert (tmp_path / "a.kmtf").read_bytes() == (tmp_path / "b.kmtf").read_bytes()


def test_empty_container():
    assert decode_records(encode_records([])) == []


def test_bad_magic():
    data = b"XXXX" + encode_records(_records())[4:]
    with pytest.raises(BadMagicError):
        decode_records(data)


def test_truncated_payload():
    data = encode_records(_records())
    with pytest.raises(TruncatedPayloadError):
        decode_records(data[:-1])


def test_unknown_dtype_code():
    data = bytearray(encode_records([TensorRecord.from_array("x", np.zeros(1, dtype=np.float32))]))
    # header 12 字节 + 名称长度 4 字节 + 名称 1 字节之后是类型码
    data[17] = 9
    with pytest.raises(UnknownDtypeError):
        decode_records(bytes(data))


def test_duplicate_record_names():
    record = TensorRecord.from_array("x", np.zeros(1))
    with pytest.raises(DuplicateRecordError):
        encode_records([record, record])


def test_container_errors_are_validation_errors():
    with pytest.raises(ValidationError):
        decode_records(b"KMT")


def test_motion_sidecar_round_trip(tmp_path):
    seq = MotionSequence(np.random.default_rng(0).normal(size=(4, 5, 3)).astype(np.float32), 30, "face")
    path = tmp_path / "nested" / "seq.kmtf"
    save_motion(seq, path, SpeakerId(2))
    loaded, speaker = load_motion(path)
    assert loaded == seq
    assert speaker == SpeakerId(2)


def test_float64_motion_is_stored_as_float32(tmp_path):
    frames = np.random.default_rng(1).normal(size=(3, 4, 3))
    save_motion(MotionSequence(frames, 25, "face"), tmp_path / "seq.kmtf")
    loaded, _ = load_motion(tmp_path / "seq.kmtf")
    assert loaded.frames.dtype == np.float32
    np.testing.assert_array_equal(loaded.frames, frames.astype(np.float32))


def test_load_wrong_kind(tmp_path, small_mesh):
    save_mesh(small_mesh, tmp_path / "mesh.kmtf")
    assert load_mesh(tmp_path / "mesh.kmtf") == small_mesh
    with pytest.raises(ValidationError):
        load_motion(tmp_path / "mesh.kmtf")


def test_key_motions_round_trip(tmp_path):
    key = KeyMotionSet([0, 2], np.ones((2, 3, 3), dtype=np.float32), 5)
    save_key_motions(key, tmp_path / "k.kmtf", 25.0, "m")
    assert load_key_motions(tmp_path / "k.kmtf") == key


def test_obj_export_zero_displacement(tmp_path, small_mesh):
    seq = MotionSequence(np.zeros((2, 12, 3), dtype=np.float32), 25, small_mesh.name)
    assert export_obj_sequence(seq, small_mesh, tmp_path) == 2
    lines = (tmp_path / "frame_00000.obj").read_text().splitlines()
    assert lines[0] == "o tinyface_00000"
    assert lines[1] == "v 0.000000 1.000000 2.000000"
    assert lines[-1] == "f 1 2 3"
    assert len([l for l in lines if l.startswith("v ")]) == 12


def test_obj_export_displacement(tmp_path, small_mesh):
    frames = np.zeros((1, 12, 3), dtype=np.float32)
    frames[0, 0, 0] = 1.0
    export_obj_sequence(MotionSequence(frames, 25, small_mesh.name), small_mesh, tmp_path)
    lines = (tmp_path / "frame_00000.obj").read_text().splitlines()
    assert lines[1] == "v 1.000000 1.000000 2.000000"


def test_obj_export_vertex_mismatch(tmp_path, small_mesh):
    seq = MotionSequence(np.zeros((1, 5, 3)), 25, "m")
    with pytest.raises(ValidationError):
        export_obj_sequence(seq, small_mesh, tmp_path)


def test_corpus_store_round_trip(tmp_path, tiny_corpus):
    save_corpus(tiny_corpus, tmp_path / "corpus")
    loaded = load_corpus(tmp_path / "corpus")
    assert loaded == tiny_corpus
    assert loaded.splits == tiny_corpus.splits
