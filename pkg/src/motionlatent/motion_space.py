"""Decoupled implicit 3D keypoint motion and the pose/expression transfer algebra.

Keypoints are stored as rows, so a rigid rotation acts as ``x @ R``. Rotations
are parameterized by Euler angles with the fixed composition

    R = Rz(roll) @ Ry(yaw) @ Rx(pitch)

where each factor is the usual right-handed rotation acting on column vectors.
The composition is singular at ``|yaw| = pi/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, InvalidArgumentError

DEFAULT_NUM_KEYPOINTS = 21

# Pose vector layout: yaw, pitch, roll (radians), translation xyz, scale.
POSE_DIM = 7
POSE_NAMES = ("yaw", "pitch", "roll", "tx", "ty", "tz", "scale")
ANGLE_SLICE = slice(0, 3)
TRANSLATION_SLICE = slice(3, 6)
SCALE_INDEX = 6


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation matrix ``Rz(roll) @ Ry(yaw) @ Rx(pitch)``."""
    angles = np.array([yaw, pitch, roll], dtype=np.float64)
    if not np.all(np.isfinite(angles)):
        raise InvalidArgumentError(f"rotation angles must be finite, got {angles}")
    return _rz(angles[2]) @ _ry(angles[0]) @ _rx(angles[1])


def euler_to_rotation_batch(angles: np.ndarray) -> np.ndarray:
    """Vectorized :func:`euler_to_rotation` for an ``(N, 3)`` array of (yaw, pitch, roll)."""
    angles = np.asarray(angles, dtype=np.float64)
    if not np.all(np.isfinite(angles)):
        raise InvalidArgumentError("rotation angles must be finite")
    yaw, pitch, roll = angles[..., 0], angles[..., 1], angles[..., 2]
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    R = np.empty(angles.shape[:-1] + (3, 3))
    R[..., 0, 0] = cr * cy
    R[..., 0, 1] = cr * sy * sp - sr * cp
    R[..., 0, 2] = cr * sy * cp + sr * sp
    R[..., 1, 0] = sr * cy
    R[..., 1, 1] = sr * sy * sp + cr * cp
    R[..., 1, 2] = sr * sy * cp - cr * sp
    R[..., 2, 0] = -sy
    R[..., 2, 1] = cy * sp
    R[..., 2, 2] = cy * cp
    return R


def rotation_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_rotation`, valid away from ``|yaw| = pi/2``."""
    R = np.asarray(R, dtype=np.float64)
    yaw = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    pitch = np.arctan2(R[2, 1], R[2, 2])
    roll = np.arctan2(R[1, 0], R[0, 0])
    return float(yaw), float(pitch), float(roll)


@dataclass(frozen=True)
class MotionFrame:
    """One frame of decoupled motion: identity keypoints, expression offsets and pose."""

    canonical_kp: np.ndarray
    expression: np.ndarray
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        kp = np.asarray(self.canonical_kp, dtype=np.float64)
        ex = np.asarray(self.expression, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if kp.ndim != 2 or kp.shape[1] != 3:
            raise DimensionError(f"canonical_kp must be (K, 3), got {kp.shape}")
        if ex.shape != kp.shape:
            raise DimensionError(f"expression shape {ex.shape} != canonical shape {kp.shape}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidArgumentError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "canonical_kp", kp)
        object.__setattr__(self, "expression", ex)
        object.__setattr__(self, "translation", t)

    @property
    def num_keypoints(self) -> int:
        return self.canonical_kp.shape[0]

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.yaw, self.pitch, self.roll)

    @property
    def pose(self) -> np.ndarray:
        """Pose vector (yaw, pitch, roll, tx, ty, tz, scale)."""
        return np.concatenate([[self.yaw, self.pitch, self.roll], self.translation, [self.scale]])

    @classmethod
    def from_pose(cls, canonical_kp, expression, pose) -> "MotionFrame":
        pose = np.asarray(pose, dtype=np.float64)
        return cls(canonical_kp, expression, float(pose[0]), float(pose[1]), float(pose[2]),
                   pose[TRANSLATION_SLICE].copy(), float(pose[SCALE_INDEX]))

    def with_(self, **changes) -> "MotionFrame":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, MotionFrame):
            return NotImplemented
        return (np.array_equal(self.canonical_kp, other.canonical_kp)
                and np.array_equal(self.expression, other.expression)
                and np.array_equal(self.pose, other.pose))

    __hash__ = None


def _keypoints(canonical, expression, R, t, s):
    return s * (canonical @ R + expression) + t


def apply_motion(frame: MotionFrame) -> np.ndarray:
    """Transformed keypoints ``s * (x_c @ R + delta) + t``, shape (K, 3)."""
    return _keypoints(frame.canonical_kp, frame.expression, frame.rotation,
                      frame.translation, frame.scale)


def _check_same_k(a: MotionFrame, b: MotionFrame):
    if a.num_keypoints != b.num_keypoints:
        raise DimensionError(f"keypoint count mismatch: {a.num_keypoints} vs {b.num_keypoints}")


def transfer_pose(target: MotionFrame, pose_source: MotionFrame) -> np.ndarray:
    """Target's identity and expression under the source's rotation, translation and scale."""
    _check_same_k(target, pose_source)
    return _keypoints(target.canonical_kp, target.expression, pose_source.rotation,
                      pose_source.translation, pose_source.scale)


def transfer_expression(target: MotionFrame, expr_source: MotionFrame) -> np.ndarray:
    """Everything from the target except the expression offsets, taken from the source."""
    _check_same_k(target, expr_source)
    return _keypoints(target.canonical_kp, expr_source.expression, target.rotation,
                      target.translation, target.scale)


def depose(points: np.ndarray, frame: MotionFrame) -> np.ndarray:
    """Remove the rigid part of ``frame``: ``(x - t) / s @ R.T``."""
    return ((points - frame.translation) / frame.scale) @ frame.rotation.T


def latent_transfer_consistency(frame_i: MotionFrame, frame_j: MotionFrame) -> float:
    """Keypoint-space agreement between pose transfer j->i and expression transfer i->j.

    Both constructions carry frame i's expression under frame j's rigid transform,
    so after de-posing with that transform they differ only through the canonical
    keypoints. Returns the mean squared per-keypoint distance.
    """
    _check_same_k(frame_i, frame_j)
    a = depose(transfer_pose(frame_i, frame_j), frame_j)
    b = depose(transfer_expression(frame_j, frame_i), frame_j)
    return float(np.mean(np.sum((a - b) ** 2, axis=1)))


def apply_motion_sequence(canonical_kp: np.ndarray, expression: np.ndarray,
                          pose: np.ndarray) -> np.ndarray:
    """Vectorized keypoints for a sequence: expression (N, K, 3), pose (N, 7) -> (N, K, 3)."""
    R = euler_to_rotation_batch(pose[:, ANGLE_SLICE])
    s = pose[:, SCALE_INDEX][:, None, None]
    t = pose[:, TRANSLATION_SLICE][:, None, :]
    return s * (np.einsum("kj,nji->nki", canonical_kp, R) + expression) + t
