"""Motion-decoupled adaptive normalization.

Expression offsets are z-scored with statistics pooled over every frame of every
clip. Pose (yaw, pitch, roll, translation, scale) is z-scored with each clip's own
temporal statistics, so every identity keeps its private resting pose.

A normalized motion vector is laid out as ``[expression (3K) | pose (7)]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInputError, FormatError, MissingStatsError
from .motion_space import POSE_DIM, MotionFrame

DEFAULT_EPSILON = 1e-6
STATS_VERSION = 1


def _population_stats(x: np.ndarray, epsilon: float):
    mean = x.sum(axis=0) / x.shape[0]
    std = np.sqrt(((x - mean) ** 2).sum(axis=0) / x.shape[0])
    return mean, np.maximum(std, epsilon)


def compute_expression_stats(clips: Sequence, epsilon: float = DEFAULT_EPSILON):
    """Frame-weighted global mean and population std of the expression offsets.

    ``clips`` holds MotionClip objects or raw ``(N_i, K, 3)`` arrays.
    """
    arrays = [np.asarray(getattr(c, "expression", c), dtype=np.float64) for c in clips]
    arrays = [a for a in arrays if len(a)]
    if not arrays:
        raise EmptyInputError("expression statistics need at least one frame")
    flat = np.concatenate([a.reshape(len(a), -1) for a in arrays], axis=0)
    K = arrays[0].shape[1]
    mean, std = _population_stats(flat, epsilon)
    return mean.reshape(K, 3), std.reshape(K, 3)


def compute_pose_stats(clip, epsilon: float = DEFAULT_EPSILON):
    """Per-clip temporal mean and population std of the 7-dim pose vector."""
    pose = np.asarray(getattr(clip, "pose", clip), dtype=np.float64)
    if pose.ndim != 2 or pose.shape[0] == 0:
        raise EmptyInputError("pose statistics need a non-empty clip")
    return _population_stats(pose, epsilon)


@dataclass(frozen=True)
class NormStats:
    expr_mean: np.ndarray
    expr_std: np.ndarray
    pose_mean: Mapping[str, np.ndarray] = field(default_factory=dict)
    pose_std: Mapping[str, np.ndarray] = field(default_factory=dict)
    epsilon: float = DEFAULT_EPSILON

    @property
    def num_keypoints(self) -> int:
        return self.expr_mean.shape[0]

    @property
    def motion_dim(self) -> int:
        return 3 * self.num_keypoints + POSE_DIM

    @classmethod
    def from_clips(cls, clips, epsilon: float = DEFAULT_EPSILON) -> "NormStats":
        mean, std = compute_expression_stats(clips, epsilon)
        stats = cls(mean, std, {}, {}, epsilon)
        return stats.with_clips(clips)

    def with_clips(self, clips) -> "NormStats":
        """Copy with per-clip pose statistics added for ``clips`` (expression stats kept)."""
        pm, ps = dict(self.pose_mean), dict(self.pose_std)
        for clip in clips:
            pm[clip.clip_id], ps[clip.clip_id] = compute_pose_stats(clip, self.epsilon)
        return NormStats(self.expr_mean, self.expr_std, pm, ps, self.epsilon)

    def with_reference(self, key: str, reference_pose, pose_std=None) -> "NormStats":
        """Register pose statistics for an unseen identity known from one frame.

        The mean is the reference pose; the std defaults to the per-component median
        of the stored per-clip stds.
        """
        if pose_std is None:
            if not self.pose_std:
                raise MissingStatsError("no per-clip pose stds to derive a reference prior from")
            pose_std = np.median(np.stack(list(self.pose_std.values())), axis=0)
        pm, ps = dict(self.pose_mean), dict(self.pose_std)
        pm[key] = np.asarray(reference_pose, dtype=np.float64).copy()
        ps[key] = np.maximum(np.asarray(pose_std, dtype=np.float64), self.epsilon)
        return NormStats(self.expr_mean, self.expr_std, pm, ps, self.epsilon)

    def pose_stats(self, key: str):
        try:
            return self.pose_mean[key], self.pose_std[key]
        except KeyError:
            raise MissingStatsError(f"no pose statistics for clip {key!r}") from None

    # array paths -------------------------------------------------------

    def normalize_arrays(self, expression: np.ndarray, pose: np.ndarray, key: str) -> np.ndarray:
        """(N, K, 3) expression and (N, 7) pose -> (N, 3K+7) normalized motion."""
        pm, ps = self.pose_stats(key)
        n = expression.shape[0]
        ex = (expression - self.expr_mean) / self.expr_std
        return np.concatenate([ex.reshape(n, -1), (pose - pm) / ps], axis=1)

    def denormalize_arrays(self, motion: np.ndarray, key: str):
        """Inverse of :meth:`normalize_arrays`; returns (expression, pose)."""
        pm, ps = self.pose_stats(key)
        motion = np.asarray(motion, dtype=np.float64)
        K = self.num_keypoints
        ex = motion[..., :3 * K].reshape(motion.shape[:-1] + (K, 3)) * self.expr_std + self.expr_mean
        pose = motion[..., 3 * K:] * ps + pm
        return ex, pose

    def normalize_clip(self, clip) -> np.ndarray:
        return self.normalize_arrays(clip.expression, clip.pose, clip.clip_id)

    # persistence -------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": "motionlatent-normstats",
            "version": STATS_VERSION,
            "K": self.num_keypoints,
            "epsilon": self.epsilon,
            "expr_mean": self.expr_mean.reshape(-1).tolist(),
            "expr_std": self.expr_std.reshape(-1).tolist(),
            "pose": {k: {"mean": self.pose_mean[k].tolist(), "std": self.pose_std[k].tolist()}
                     for k in sorted(self.pose_mean)},
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        try:
            doc = json.loads(text)
            if doc.get("format") != "motionlatent-normstats":
                raise FormatError("not a stats file", offset=0)
            if doc["version"] != STATS_VERSION:
                raise FormatError(f"unsupported stats version {doc['version']}", offset=0)
            K = int(doc["K"])
            mean = np.array(doc["expr_mean"], dtype=np.float64).reshape(K, 3)
            std = np.array(doc["expr_std"], dtype=np.float64).reshape(K, 3)
            pm = {k: np.array(v["mean"], dtype=np.float64).reshape(POSE_DIM) for k, v in doc["pose"].items()}
            ps = {k: np.array(v["std"], dtype=np.float64).reshape(POSE_DIM) for k, v in doc["pose"].items()}
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid stats JSON: {exc.msg}", offset=exc.pos) from None
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"malformed stats file: {exc}") from None
        return cls(mean, std, pm, ps, float(doc["epsilon"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_json(Path(path).read_text())


def normalize(frame: MotionFrame, stats: NormStats, clip_id: str) -> np.ndarray:
    """Normalized motion vector ``[expr | pose]`` of length 3K+7 for one frame."""
    return stats.normalize_arrays(frame.expression[None], frame.pose[None], clip_id)[0]


def denormalize(vector: np.ndarray, stats: NormStats, clip_id: str, canonical_kp) -> MotionFrame:
    """Inverse of :func:`normalize`. ``canonical_kp`` supplies the identity keypoints."""
    ex, pose = stats.denormalize_arrays(np.asarray(vector)[None], clip_id)
    return MotionFrame.from_pose(canonical_kp, ex[0], pose[0])
