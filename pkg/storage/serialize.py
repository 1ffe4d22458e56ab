"""
领域类型的持久化：张量进 KMTF 容器，标量进同名 .json sidecar。

sidecar 约定字段 {"fps": number, "mesh": name, "speaker": id}，另加 "kind"
标明类型以便读回时校验。
"""
from pathlib import Path
from typing import Optional, Tuple, Union

from models import (MeshSpec, MotionSequence, AudioFeatureSequence, KeyMotionSet,
                    SpeakerId, TensorRecord, ValidationError)
from models.motion import speaker_or_none
from storage.container import write_tensor_container, read_tensor_container, records_to_dict
from utils.text_utils import dump_json, load_json

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix('.json')


def _write(path: PathLike, records, meta: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_tensor_container(records, path)
    dump_json(meta, sidecar_path(path))


def _read(path: PathLike, kind: str):
    meta = load_json(sidecar_path(path))
    if meta.get('kind') != kind:
        raise ValidationError(f"{path}: expected a {kind} file, sidecar says {meta.get('kind')!r}")
    return records_to_dict(read_tensor_container(path)), meta


def save_motion(seq: MotionSequence, path: PathLike, speaker: Optional[SpeakerId] = None) -> None:
    """
    写运动文件。

    KMTF 只有 float32 与 int64 两种类型，float64 序列（梯度检查用）写入时收窄为 float32，
    读回的帧是 float32。
    """
    _write(path, [TensorRecord.from_array('frames', seq.frames)],
           {'kind': 'motion', 'fps': seq.fps, 'mesh': seq.mesh_ref,
            'speaker': None if speaker is None else speaker.id})


def load_motion(path: PathLike) -> Tuple[MotionSequence, Optional[SpeakerId]]:
    arrays, meta = _read(path, 'motion')
    speaker = speaker_or_none(meta.get('speaker'))
    return MotionSequence(frames=arrays['frames'], fps=meta['fps'], mesh_ref=meta['mesh']), speaker


def save_audio(audio: AudioFeatureSequence, path: PathLike, mesh_ref: str = "",
               speaker: Optional[SpeakerId] = None) -> None:
    _write(path, [TensorRecord.from_array('features', audio.features)],
           {'kind': 'audio', 'fps': audio.fps, 'mesh': mesh_ref,
            'speaker': None if speaker is None else speaker.id})


def load_audio(path: PathLike) -> AudioFeatureSequence:
    arrays, meta = _read(path, 'audio')
    return AudioFeatureSequence(features=arrays['features'], fps=meta['fps'])


def save_mesh(mesh: MeshSpec, path: PathLike) -> None:
    _write(path, [TensorRecord.from_array('template_positions', mesh.template_positions),
                  TensorRecord.from_array('lip_vertices', mesh.lip_vertices),
                  TensorRecord.from_array('upper_face_vertices', mesh.upper_face_vertices)],
           {'kind': 'mesh', 'fps': None, 'mesh': mesh.name, 'speaker': None})


def load_mesh(path: PathLike) -> MeshSpec:
    arrays, meta = _read(path, 'mesh')
    return MeshSpec(name=meta['mesh'], template_positions=arrays['template_positions'],
                    lip_vertices=arrays['lip_vertices'],
                    upper_face_vertices=arrays['upper_face_vertices'])


def save_key_motions(key: KeyMotionSet, path: PathLike, fps: float, mesh_ref: str) -> None:
    _write(path, [TensorRecord.from_array('indices', key.indices),
                  TensorRecord.from_array('motions', key.motions)],
           {'kind': 'key_motions', 'fps': fps, 'mesh': mesh_ref, 'speaker': None,
            'n_frames': key.n_frames})


def load_key_motions(path: PathLike) -> KeyMotionSet:
    arrays, meta = _read(path, 'key_motions')
    return KeyMotionSet(indices=arrays['indices'], motions=arrays['motions'], n_frames=meta['n_frames'])
