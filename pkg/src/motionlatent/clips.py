"""Motion clips and their binary file format.

Clip file layout (all little-endian)::

    offset  size  field
    0       8     magic  b"MLCLIP\\r\\n"
    8       2     version (uint16, currently 1)
    10      4     K, keypoints per frame (uint32)
    14      8     fps (float64)
    22      4     T, frame count (uint32)
    26      4     D_a, audio feature width (uint32)
    30      1     has_emotion (uint8, 0 or 1)
    31      1     emotion index into EMOTIONS (uint8, 255 when absent)
    32      2     clip-id byte length n (uint16)
    34      n     clip id, UTF-8
    ...           float64 arrays, row-major: canonical (K*3), expression (T*K*3),
                  pose (T*7), audio (T*D_a)

The file must end exactly after the audio block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, EmptyInputError, FormatError, InvalidArgumentError
from .motion_space import POSE_DIM, MotionFrame, apply_motion_sequence

EMOTIONS = ("neutral", "happy", "sad", "angry", "surprised", "fear", "disgust", "contempt")

CLIP_MAGIC = b"MLCLIP\r\n"
CLIP_VERSION = 1
_HEADER = struct.Struct("<8sHIdIIBBH")


def emotion_index(label: str) -> int:
    try:
        return EMOTIONS.index(label)
    except ValueError:
        raise InvalidArgumentError(f"unknown emotion label {label!r}; expected one of {EMOTIONS}") from None


@dataclass
class MotionClip:
    """A sequence of motion frames with aligned audio features.

    ``canonical_kp`` is shared by every frame (it is the identity), ``expression`` is
    (T, K, 3), ``pose`` is (T, 7) and ``audio`` is (T, D_a).
    """

    clip_id: str
    canonical_kp: np.ndarray
    expression: np.ndarray
    pose: np.ndarray
    audio: np.ndarray
    fps: float = 25.0
    emotion: str | None = None

    def __post_init__(self):
        self.canonical_kp = np.asarray(self.canonical_kp, dtype=np.float64)
        self.expression = np.asarray(self.expression, dtype=np.float64)
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.audio = np.asarray(self.audio, dtype=np.float64)
        K = self.canonical_kp.shape[0]
        if self.canonical_kp.shape != (K, 3):
            raise DimensionError(f"canonical_kp must be (K, 3), got {self.canonical_kp.shape}")
        T = self.expression.shape[0]
        if self.expression.shape != (T, K, 3):
            raise DimensionError(f"expression must be ({T}, {K}, 3), got {self.expression.shape}")
        if self.pose.shape != (T, POSE_DIM):
            raise DimensionError(f"pose must be ({T}, {POSE_DIM}), got {self.pose.shape}")
        if self.audio.ndim != 2 or self.audio.shape[0] != T:
            raise DimensionError(f"audio must have {T} rows, got {self.audio.shape}")
        if self.emotion is not None:
            emotion_index(self.emotion)

    def __len__(self):
        return self.expression.shape[0]

    @property
    def num_keypoints(self) -> int:
        return self.canonical_kp.shape[0]

    @property
    def identity(self) -> np.ndarray:
        """Identity feature: flattened canonical keypoints."""
        return self.canonical_kp.reshape(-1)

    def frame(self, i: int) -> MotionFrame:
        return MotionFrame.from_pose(self.canonical_kp, self.expression[i], self.pose[i])

    @property
    def frames(self) -> list[MotionFrame]:
        return [self.frame(i) for i in range(len(self))]

    def keypoints(self) -> np.ndarray:
        return apply_motion_sequence(self.canonical_kp, self.expression, self.pose)

    def __eq__(self, other):
        if not isinstance(other, MotionClip):
            return NotImplemented
        return (self.clip_id == other.clip_id and self.fps == other.fps
                and self.emotion == other.emotion
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("canonical_kp", "expression", "pose", "audio")))

    __hash__ = None


def clip_to_bytes(clip: MotionClip) -> bytes:
    T = len(clip)
    if T == 0:
        raise EmptyInputError(f"clip {clip.clip_id!r} has no frames")
    cid = clip.clip_id.encode("utf-8")
    emo = 255 if clip.emotion is None else emotion_index(clip.emotion)
    header = _HEADER.pack(CLIP_MAGIC, CLIP_VERSION, clip.num_keypoints, float(clip.fps), T,
                          clip.audio.shape[1], int(clip.emotion is not None), emo, len(cid))
    blocks = [clip.canonical_kp, clip.expression, clip.pose, clip.audio]
    return header + cid + b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in blocks)


def clip_from_bytes(data: bytes) -> MotionClip:
    if len(data) < _HEADER.size:
        raise FormatError("truncated clip header", offset=len(data))
    magic, version, K, fps, T, D_a, has_emo, emo, n = _HEADER.unpack_from(data, 0)
    if magic != CLIP_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != CLIP_VERSION:
        raise FormatError(f"unsupported clip version {version}", offset=8)
    if T == 0 or K == 0:
        raise FormatError("clip with no frames or keypoints", offset=10)
    pos = _HEADER.size
    if len(data) < pos + n:
        raise FormatError("truncated clip id", offset=len(data))
    try:
        clip_id = data[pos:pos + n].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("clip id is not valid UTF-8", offset=pos) from None
    pos += n
    if has_emo not in (0, 1) or (has_emo and emo >= len(EMOTIONS)):
        raise FormatError(f"bad emotion fields ({has_emo}, {emo})", offset=30)

    arrays = []
    for shape in ((K, 3), (T, K, 3), (T, POSE_DIM), (T, D_a)):
        nbytes = 8 * int(np.prod(shape))
        if len(data) < pos + nbytes:
            raise FormatError("truncated array data", offset=len(data))
        arrays.append(np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos)
                      .reshape(shape).astype(np.float64))
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", offset=pos)
    return MotionClip(clip_id, *arrays, fps=fps, emotion=EMOTIONS[emo] if has_emo else None)


def save_clip(clip: MotionClip, path) -> None:
    data = clip_to_bytes(clip)
    Path(path).write_bytes(data)


def load_clip(path) -> MotionClip:
    return clip_from_bytes(Path(path).read_bytes())


def save_dataset(clips, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for clip in clips:
        p = directory / f"{clip.clip_id}.clip"
        save_clip(clip, p)
        paths.append(p)
    return paths


def load_dataset(directory) -> list[MotionClip]:
    paths = sorted(Path(directory).glob("*.clip"))
    if not paths:
        raise EmptyInputError(f"no .clip files in {directory}")
    return [load_clip(p) for p in paths]
