from dataclasses import dataclass
from typing import Optional

import numpy as np

from models.validation import ValidationError, as_float_array, as_index_array, arrays_equal


@dataclass(frozen=True, eq=False)
class MeshSpec:
    """
    中性模板网格描述（不含拓扑）。

    所有运动均表示为相对 template_positions 的逐顶点位移，单位毫米。

    Attributes:
        name (str): 网格标识
        template_positions (np.ndarray): V×3 模板顶点坐标（毫米）
        lip_vertices (np.ndarray): 嘴唇区域顶点下标
        upper_face_vertices (np.ndarray): 上半脸区域顶点下标

    Raises:
        ValidationError: 区域为空、相交或下标越界时抛出
    """
    name: str
    template_positions: np.ndarray
    lip_vertices: np.ndarray
    upper_face_vertices: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValidationError("mesh name must be non-empty")
        template = as_float_array(self.template_positions, "template_positions", 2)
        if template.shape[0] < 1 or template.shape[1] != 3:
            raise ValidationError(f"template_positions must be V×3, got {template.shape}")
        object.__setattr__(self, 'template_positions', template)

        v = template.shape[0]
        for attr in ('lip_vertices', 'upper_face_vertices'):
            idx = np.unique(as_index_array(getattr(self, attr), attr))
            if idx.size == 0:
                raise ValidationError(f"{attr} must be non-empty")
            if idx[0] < 0 or idx[-1] >= v:
                raise ValidationError(f"{attr} has indices outside [0, {v})")
            idx.setflags(write=False)
            object.__setattr__(self, attr, idx)

        if np.intersect1d(self.lip_vertices, self.upper_face_vertices).size:
            raise ValidationError("lip_vertices and upper_face_vertices must be disjoint")

    @property
    def vertex_count(self) -> int:
        return int(self.template_positions.shape[0])

    def __eq__(self, other):
        if not isinstance(other, MeshSpec):
            return NotImplemented
        return (self.name == other.name
                and arrays_equal(self.template_positions, other.template_positions)
                and arrays_equal(self.lip_vertices, other.lip_vertices)
                and arrays_equal(self.upper_face_vertices, other.upper_face_vertices))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """N×V×3 逐帧顶点位移（毫米），对应 Ŷ / Y / Y_p。"""
    frames: np.ndarray
    fps: float
    mesh_ref: str

    def __post_init__(self):
        frames = as_float_array(self.frames, "frames", 3)
        if frames.shape[0] < 1 or frames.shape[2] != 3:
            raise ValidationError(f"frames must be N×V×3 with N ≥ 1, got {frames.shape}")
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, 'frames', frames)
        object.__setattr__(self, 'fps', float(self.fps))

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def vertex_count(self) -> int:
        return int(self.frames.shape[1])

    def check_mesh(self, mesh: MeshSpec) -> None:
        if self.vertex_count != mesh.vertex_count:
            raise ValidationError(
                f"motion has {self.vertex_count} vertices but mesh {mesh.name!r} has {mesh.vertex_count}")

    def with_frames(self, frames) -> 'MotionSequence':
        return MotionSequence(frames=frames, fps=self.fps, mesh_ref=self.mesh_ref)

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (self.fps == other.fps and self.mesh_ref == other.mesh_ref
                and arrays_equal(self.frames, other.frames))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AudioFeatureSequence:
    """N×d 与视频帧率对齐的音频特征 A。"""
    features: np.ndarray
    fps: float

    def __post_init__(self):
        features = as_float_array(self.features, "features", 2)
        if features.shape[0] < 1 or features.shape[1] < 1:
            raise ValidationError(f"features must be N×d with N, d ≥ 1, got {features.shape}")
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'fps', float(self.fps))

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    def check_pair(self, motion: MotionSequence) -> None:
        """音频与运动成对使用时必须帧数一致。"""
        if self.n_frames != motion.n_frames:
            raise ValidationError(
                f"audio has {self.n_frames} frames but motion has {motion.n_frames}")

    def __eq__(self, other):
        if not isinstance(other, AudioFeatureSequence):
            return NotImplemented
        return self.fps == other.fps and arrays_equal(self.features, other.features)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class KeyMotionSet:
    """
    关键运动集合：有序唯一的关键帧下标 I 与对应的 m×V×3 关键运动 K。

    complement 给出非关键帧下标 I′ = [0, N) \\ I。
    """
    indices: np.ndarray
    motions: np.ndarray
    n_frames: int

    def __post_init__(self):
        indices = as_index_array(self.indices, "indices")
        motions = as_float_array(self.motions, "motions", 3)
        n = int(self.n_frames)
        if n < 1:
            raise ValidationError(f"n_frames must be ≥ 1, got {n}")
        if indices.size and (np.any(np.diff(indices) <= 0)):
            raise ValidationError("key indices must be sorted and unique")
        if indices.size and (indices[0] < 0 or indices[-1] >= n):
            raise ValidationError(f"key indices must lie in [0, {n})")
        if motions.shape[0] != indices.size or motions.shape[2] != 3:
            raise ValidationError(
                f"motions must be {indices.size}×V×3 to match the indices, got {motions.shape}")
        object.__setattr__(self, 'indices', indices)
        object.__setattr__(self, 'motions', motions)
        object.__setattr__(self, 'n_frames', n)

    @property
    def m(self) -> int:
        return int(self.indices.size)

    @property
    def complement(self) -> np.ndarray:
        mask = np.ones(self.n_frames, dtype=bool)
        mask[self.indices] = False
        return np.flatnonzero(mask).astype(np.int64)

    @classmethod
    def from_sequence(cls, seq: MotionSequence, indices) -> 'KeyMotionSet':
        """按下标 I 从完整序列中取出关键运动。"""
        idx = as_index_array(indices, "indices")
        if idx.size and (idx.min() < 0 or idx.max() >= seq.n_frames):
            raise ValidationError(f"key indices must lie in [0, {seq.n_frames})")
        return cls(indices=idx, motions=seq.frames[idx], n_frames=seq.n_frames)

    def __eq__(self, other):
        if not isinstance(other, KeyMotionSet):
            return NotImplemented
        return (self.n_frames == other.n_frames and arrays_equal(self.indices, other.indices)
                and arrays_equal(self.motions, other.motions))

    __hash__ = None


@dataclass(frozen=True)
class SpeakerId:
    """说话人编号，索引说话人嵌入表。"""
    id: int = 0

    def __post_init__(self):
        if int(self.id) < 0:
            raise ValidationError(f"speaker id must be non-negative, got {self.id}")
        object.__setattr__(self, 'id', int(self.id))

    def check(self, speaker_count: int) -> None:
        if self.id >= speaker_count:
            raise ValidationError(f"unknown speaker id {self.id} (configured speakers: {speaker_count})")


def speaker_or_none(value: Optional[int]) -> Optional[SpeakerId]:
    return None if value is None else SpeakerId(value)
