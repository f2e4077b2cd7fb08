"""Desk-scale evaluation metrics and the JSON evaluation report."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyInputError, InvalidArgumentError
from .motion_space import ANGLE_SLICE

ANGLE_CHANNELS = ("yaw", "pitch", "roll")
SEPARATION_CAP = 1e6
METRIC_KEYS = ("apd_yaw_deg", "apd_pitch_deg", "apd_roll_deg", "akd", "jitter",
               "emotion_separation", "traj_mse")


def _pair(gen, ref, what: str):
    gen, ref = np.asarray(gen, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if gen.shape != ref.shape:
        raise DimensionError(f"{what}: shape mismatch {gen.shape} vs {ref.shape}")
    if gen.shape[0] == 0:
        raise EmptyInputError(f"{what}: empty sequence")
    return gen, ref


def _angles(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    return pose[:, :3] if pose.shape[-1] == 3 else pose[:, ANGLE_SLICE]


def metric_apd(gen_pose, ref_pose) -> dict[str, float]:
    """Mean absolute per-frame angle difference in degrees, per channel.

    Accepts (N, 7) pose rows or (N, 3) angle rows, in radians.
    """
    gen, ref = _pair(_angles(gen_pose), _angles(ref_pose), "apd")
    diff = np.rad2deg(np.abs(gen - ref)).mean(axis=0)
    return {f"apd_{c}_deg": float(d) for c, d in zip(ANGLE_CHANNELS, diff)}


def metric_akd(gen_kp, ref_kp) -> float:
    """Mean Euclidean distance over frames and keypoints; inputs (N, K, 3)."""
    gen, ref = _pair(gen_kp, ref_kp, "akd")
    if gen.ndim != 3 or gen.shape[-1] != 3:
        raise DimensionError(f"akd expects (N, K, 3), got {gen.shape}")
    return float(np.linalg.norm(gen - ref, axis=-1).mean())


def metric_jitter(pose) -> float:
    """Mean norm of the second temporal difference of the angle channels, degrees/frame^2."""
    ang = _angles(pose)
    if ang.shape[0] < 3:
        raise InvalidArgumentError(f"jitter needs at least 3 frames, got {ang.shape[0]}")
    d2 = np.rad2deg(ang[2:] - 2 * ang[1:-1] + ang[:-2])
    return float(np.linalg.norm(d2, axis=-1).mean())


def metric_traj_mse(gen, ref) -> float:
    gen, ref = _pair(gen, ref, "traj_mse")
    return float(((gen - ref) ** 2).mean())


def metric_emotion_separation(groups: dict, cap: float = SEPARATION_CAP) -> float:
    """Between-label over within-label variance of per-clip time-averaged expression.

    ``groups`` maps a label to a list of (N_i, ...) expression arrays (or already
    averaged vectors). Between variance is the mean squared distance of label means
    from their grand mean; within variance is the mean squared distance of clips
    from their own label mean. A zero within-variance returns ``cap`` (or 0 if the
    labels also coincide).
    """
    if len(groups) < 2:
        raise InvalidArgumentError("emotion separation needs at least 2 labels")
    means, within = [], []
    for label, items in groups.items():
        if len(items) < 2:
            raise InvalidArgumentError(f"label {label!r} needs at least 2 clips, got {len(items)}")
        vecs = []
        for x in items:
            x = np.asarray(x, dtype=np.float64)
            vecs.append(x.reshape(x.shape[0], -1).mean(axis=0) if x.ndim > 1 else x)
        vecs = np.stack(vecs)
        mu = vecs.mean(axis=0)
        means.append(mu)
        within.extend(((vecs - mu) ** 2).sum(axis=1))
    means = np.stack(means)
    between = float(((means - means.mean(axis=0)) ** 2).sum(axis=1).mean())
    within = float(np.mean(within))
    if within <= 0.0:
        return 0.0 if between <= 0.0 else float(cap)
    return float(min(between / within, cap))


def boundary_ratio(pose, window: int) -> float:
    """Mean angle jump across window boundaries over the mean jump inside windows.

    Uses the norm of first differences of the angle channels in degrees. A
    boundary jump is the step from frame ``kW - 1`` to ``kW``.
    """
    ang = np.rad2deg(_angles(pose))
    n = ang.shape[0]
    if n <= window:
        raise InvalidArgumentError(f"need more than one window ({n} frames, window {window})")
    steps = np.linalg.norm(np.diff(ang, axis=0), axis=-1)
    is_boundary = np.zeros(n - 1, dtype=bool)
    is_boundary[np.arange(window, n, window) - 1] = True
    intra = steps[~is_boundary].mean()
    if intra <= 0:
        return float("inf") if steps[is_boundary].mean() > 0 else 1.0
    return float(steps[is_boundary].mean() / intra)


def array_hash(*arrays) -> str:
    digest = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        digest.update(str(a.shape).encode())
        digest.update(a.tobytes())
    return digest.hexdigest()


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)
    checkpoint_hash: str | None = None
    dataset_hash: str | None = None
    seed: int | None = None

    def __post_init__(self):
        unknown = set(self.metrics) - set(METRIC_KEYS)
        if unknown:
            raise InvalidArgumentError(f"unknown metric keys {sorted(unknown)}")
        for k, v in self.metrics.items():
            if v is not None and not np.isfinite(v):
                raise InvalidArgumentError(f"metric {k} is not finite: {v}")

    def to_dict(self) -> dict:
        return {"metrics": {k: self.metrics.get(k) for k in METRIC_KEYS},
                "metadata": {"checkpoint_hash": self.checkpoint_hash,
                             "dataset_hash": self.dataset_hash, "seed": self.seed}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        meta = doc.get("metadata", {})
        metrics = {k: v for k, v in doc["metrics"].items() if v is not None}
        return cls(metrics, meta.get("checkpoint_hash"), meta.get("dataset_hash"), meta.get("seed"))


def evaluate_clips(generated, reference, seed=None, checkpoint_hash=None) -> EvalReport:
    """Pairwise metrics between matched generated and reference clips, averaged over pairs.

    ``emotion_separation`` is filled in when the generated clips carry at least two
    labels with two clips each, otherwise it is ``None``.
    """
    if len(generated) != len(reference):
        raise DimensionError(f"{len(generated)} generated clips vs {len(reference)} references")
    if not generated:
        raise EmptyInputError("no clips to evaluate")
    acc = {k: [] for k in METRIC_KEYS if k != "emotion_separation"}
    for g, r in zip(generated, reference):
        if len(g) != len(r):
            raise DimensionError(f"clip {g.clip_id}: {len(g)} frames vs reference {len(r)}")
        for k, v in metric_apd(g.pose, r.pose).items():
            acc[k].append(v)
        acc["akd"].append(metric_akd(g.keypoints(), r.keypoints()))
        acc["jitter"].append(metric_jitter(g.pose) if len(g) >= 3 else 0.0)
        acc["traj_mse"].append(metric_traj_mse(g.expression, r.expression))
    metrics = {k: float(np.mean(v)) for k, v in acc.items()}
    groups: dict = {}
    for g in generated:
        if g.emotion is not None:
            groups.setdefault(g.emotion, []).append(g.expression)
    ok = len(groups) >= 2 and all(len(v) >= 2 for v in groups.values())
    metrics["emotion_separation"] = metric_emotion_separation(groups) if ok else None
    return EvalReport(metrics, checkpoint_hash=checkpoint_hash,
                      dataset_hash=array_hash(*[a for r in reference for a in (r.expression, r.pose)]),
                      seed=seed)
