"""Synthetic motion datasets with a known audio -> expression relationship.

Every clip is produced by fixed generating equations:

* audio: ``a = z @ mix + band_noise * n`` where ``z`` holds ``n_latent`` smooth
  unit-variance Gaussian processes and ``n`` is independent smooth per-band noise;
* expression: ``delta = a @ expr_map.T + offset[emotion]`` (flattened K*3);
* pose: per-clip bias plus an integrated smooth random walk, independent of audio.

The generating map (``mix``, ``expr_map``, face template) depends only on
``map_seed``, so held-out clips drawn with another ``seed`` share the same map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .clips import EMOTIONS, MotionClip, emotion_index
from .errors import ConfigError
from .motion_space import DEFAULT_NUM_KEYPOINTS


@dataclass(frozen=True)
class GeneratingMap:
    mix: np.ndarray        # (n_latent, D_a)
    expr_map: np.ndarray   # (3K, D_a)
    template: np.ndarray   # (K, 3) mean canonical face


@dataclass
class SynthConfig:
    num_clips: int = 8
    frames_per_clip: int = 200
    num_keypoints: int = DEFAULT_NUM_KEYPOINTS
    feature_dim: int = 64
    fps: float = 25.0
    seed: int = 0
    map_seed: int = 1234
    n_latent: int = 8
    band_noise: float = 0.1
    audio_smooth: float = 2.0
    pose_smooth: float = 6.0
    emotions: tuple | None = None
    emotion_offsets: dict | None = None
    clip_prefix: str = "clip"

    def __post_init__(self):
        for name in ("num_clips", "frames_per_clip", "num_keypoints", "feature_dim", "n_latent"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.emotion_offsets:
            for label, off in self.emotion_offsets.items():
                emotion_index(label)
                if label == "neutral" and np.any(np.asarray(off) != 0):
                    raise ConfigError("the neutral emotion offset must be zero")


def make_generating_map(num_keypoints: int, feature_dim: int, n_latent: int, map_seed: int) -> GeneratingMap:
    rng = np.random.default_rng(map_seed)
    mix = rng.standard_normal((n_latent, feature_dim)) / np.sqrt(n_latent)
    n_expr = 3 * num_keypoints
    gains = rng.choice([-1.0, 1.0], n_expr) * rng.uniform(0.02, 0.05, n_expr)
    expr_map = np.zeros((n_expr, feature_dim))
    expr_map[np.arange(n_expr), np.arange(n_expr) % feature_dim] = gains
    template = rng.standard_normal((num_keypoints, 3)) * 0.5
    return GeneratingMap(mix, expr_map, template)


def generating_map(config: SynthConfig) -> GeneratingMap:
    return make_generating_map(config.num_keypoints, config.feature_dim, config.n_latent, config.map_seed)


def smooth_noise(rng: np.random.Generator, n: int, dims: int, sigma: float) -> np.ndarray:
    """Gaussian-filtered white noise rescaled to unit marginal variance."""
    white = rng.standard_normal((n, dims))
    impulse = np.zeros(int(8 * sigma) + 1)
    impulse[len(impulse) // 2] = 1.0
    gain = np.sqrt(np.sum(gaussian_filter1d(impulse, sigma) ** 2))
    return gaussian_filter1d(white, sigma, axis=0, mode="reflect") / gain


def planted_emotion_offsets(gmap: GeneratingMap, labels, scale: float = 2.0, seed: int = 0) -> dict:
    """Per-label expression offsets lying in the span reachable from audio.

    Each non-neutral label gets ``scale * expr_map @ (c @ mix)`` for a random latent
    direction ``c``; neutral is zero.
    """
    rng = np.random.default_rng(seed)
    K = gmap.template.shape[0]
    out = {}
    for label in labels:
        emotion_index(label)
        c = rng.standard_normal(gmap.mix.shape[0])
        off = np.zeros(3 * K) if label == "neutral" else scale * gmap.expr_map @ (c @ gmap.mix)
        out[label] = off.reshape(K, 3)
    return out


def _offset_for(config: SynthConfig, label, K) -> np.ndarray:
    if label is None or not config.emotion_offsets or label not in config.emotion_offsets:
        return np.zeros((K, 3))
    return np.asarray(config.emotion_offsets[label], dtype=np.float64).reshape(K, 3)


def generate_clip(config: SynthConfig, gmap: GeneratingMap, rng: np.random.Generator,
                  clip_id: str, emotion=None) -> MotionClip:
    N, K = config.frames_per_clip, config.num_keypoints
    z = smooth_noise(rng, N, config.n_latent, config.audio_smooth)
    audio = z @ gmap.mix + config.band_noise * smooth_noise(rng, N, config.feature_dim, config.audio_smooth)
    expression = (audio @ gmap.expr_map.T).reshape(N, K, 3) + _offset_for(config, emotion, K)

    canonical = gmap.template + 0.05 * rng.standard_normal((K, 3))

    vel = smooth_noise(rng, N, 7, config.pose_smooth)
    step = np.array([0.01, 0.008, 0.005, 0.002, 0.002, 0.002, 0.001])
    bias = rng.standard_normal(7) * np.array([0.15, 0.1, 0.05, 0.05, 0.05, 0.02, 0.05])
    walk = np.cumsum(vel * step, axis=0)
    pose = bias + walk
    pose[:, 6] = np.exp(pose[:, 6])
    return MotionClip(clip_id, canonical, expression, pose, audio, fps=config.fps, emotion=emotion)


def generate_synthetic_dataset(config: SynthConfig) -> list[MotionClip]:
    """Deterministic list of clips; clip ``i`` uses a seed spawned from ``config.seed``."""
    gmap = generating_map(config)
    seeds = np.random.SeedSequence(config.seed).spawn(config.num_clips)
    clips = []
    for i, ss in enumerate(seeds):
        emotion = None
        if config.emotions:
            emotion = config.emotions[i % len(config.emotions)]
        clips.append(generate_clip(config, gmap, np.random.default_rng(ss),
                                   f"{config.clip_prefix}{i:04d}", emotion))
    return clips


def expected_expression(clip: MotionClip, config: SynthConfig, gmap: GeneratingMap | None = None) -> np.ndarray:
    """Recompute a clip's expression from its audio through the generating map."""
    gmap = gmap or generating_map(config)
    K = clip.num_keypoints
    return (clip.audio @ gmap.expr_map.T).reshape(-1, K, 3) + _offset_for(config, clip.emotion, K)


def verify_dataset(clips, config: SynthConfig) -> float:
    """Largest absolute deviation between stored and recomputed expressions."""
    gmap = generating_map(config)
    return max(float(np.max(np.abs(c.expression - expected_expression(c, config, gmap)))) for c in clips)


__all__ = ["EMOTIONS", "GeneratingMap", "SynthConfig", "generate_synthetic_dataset",
           "generating_map", "planted_emotion_offsets", "expected_expression", "verify_dataset"]
