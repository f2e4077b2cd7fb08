"""Pose/expression recombination of generated clips, done entirely on motion latents.

``frozen_expression`` keeps the first frame's expression and replays the generated
poses; ``spinning_pose`` keeps the generated expression and replaces the head pose
with a predefined yaw sweep. Keypoints for either are obtained through the
transfer operators, so expression and pose channels never mix.
"""

from __future__ import annotations

import numpy as np

from .clips import MotionClip
from .motion_space import MotionFrame, transfer_expression, transfer_pose


def frozen_expression(clip: MotionClip, frame: int = 0) -> MotionClip:
    """Generated poses with the expression held at ``frame`` for the whole clip."""
    expr = np.repeat(clip.expression[frame][None], len(clip), axis=0)
    return MotionClip(clip.clip_id + "-posed", clip.canonical_kp, expr, clip.pose.copy(),
                      clip.audio, fps=clip.fps, emotion=clip.emotion)


def spin_poses(n: int, base_pose: np.ndarray, amplitude: float = np.deg2rad(30.0),
               period: float = 50.0) -> np.ndarray:
    """A sinusoidal yaw sweep around ``base_pose`` (other pose channels fixed)."""
    pose = np.repeat(np.asarray(base_pose, dtype=np.float64)[None], n, axis=0)
    pose[:, 0] = base_pose[0] + amplitude * np.sin(2 * np.pi * np.arange(n) / period)
    return pose


def spinning_pose(clip: MotionClip, amplitude: float = np.deg2rad(30.0), period: float = 50.0) -> MotionClip:
    """Generated expression driven by a predefined spinning head pose."""
    pose = spin_poses(len(clip), clip.pose[0], amplitude, period)
    return MotionClip(clip.clip_id + "-spin", clip.canonical_kp, clip.expression.copy(), pose,
                      clip.audio, fps=clip.fps, emotion=clip.emotion)


def transferred_keypoints(expression_clip: MotionClip, pose_clip: MotionClip) -> np.ndarray:
    """Per-frame keypoints with expression from one clip and pose from another, (N, K, 3)."""
    out = []
    for i in range(len(expression_clip)):
        target = expression_clip.frame(i)
        src = MotionFrame.from_pose(pose_clip.canonical_kp, pose_clip.expression[i], pose_clip.pose[i])
        out.append(transfer_pose(target, src))
    return np.stack(out)


def expression_keypoints(pose_clip: MotionClip, expression_clip: MotionClip) -> np.ndarray:
    """Keypoints of ``pose_clip`` frames with expression swapped in from ``expression_clip``."""
    return np.stack([transfer_expression(pose_clip.frame(i), expression_clip.frame(i))
                     for i in range(len(pose_clip))])
