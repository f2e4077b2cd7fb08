"""DDPM schedule, training objective, multi-condition guidance and windowed sampling.

``model`` arguments are any callable ``model(m_t, t, cond) -> eps_hat`` with
``m_t`` of shape (B, W, D), ``t`` an integer tensor of shape (B,) and ``cond`` a
:class:`ConditionBundle`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .conditions import ConditionBundle
from .errors import ConfigError, EmptyInputError, InvalidArgumentError, NumericalDivergenceError

DEFAULT_STEPS = 1000
PREV_NOISE_MAX_T = 50


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule. Arrays are indexed by t in 0..T with ``alpha_bar[0] = 1``."""

    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @classmethod
    def linear(cls, steps: int = DEFAULT_STEPS, beta_start: float = 1e-4, beta_end: float = 0.02):
        if steps < 1 or not 0 < beta_start < beta_end < 1:
            raise ConfigError(f"invalid schedule ({steps}, {beta_start}, {beta_end})")
        betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, steps)])
        alphas = 1.0 - betas
        alpha_bars = np.empty_like(alphas)
        alpha_bars[0] = 1.0
        for t in range(1, steps + 1):
            alpha_bars[t] = alpha_bars[t - 1] * alphas[t]
        return cls(torch.from_numpy(betas), torch.from_numpy(alphas), torch.from_numpy(alpha_bars))

    @property
    def steps(self) -> int:
        return self.betas.shape[0] - 1

    def posterior_variance(self, t: int) -> float:
        b, ab, ab_prev = self.betas[t], self.alpha_bars[t], self.alpha_bars[t - 1]
        return float(b * (1 - ab_prev) / (1 - ab))

    def check_t(self, t: torch.Tensor, low: int = 0):
        if t.numel() and (int(t.min()) < low or int(t.max()) > self.steps):
            raise InvalidArgumentError(f"timestep out of range [{low}, {self.steps}]: {t.tolist()}")


def _bcast(v: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return v.reshape((-1,) + (1,) * (like.dim() - 1)).to(like.dtype)


def _timesteps(t, batch: int) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    return t.expand(batch) if t.numel() == 1 else t


def q_sample(schedule: NoiseSchedule, m0: torch.Tensor, t, eps: torch.Tensor) -> torch.Tensor:
    """Forward noising ``sqrt(ab_t) m0 + sqrt(1 - ab_t) eps``; ``t = 0`` returns ``m0``."""
    if eps.shape != m0.shape:
        raise InvalidArgumentError(f"noise shape {tuple(eps.shape)} != data shape {tuple(m0.shape)}")
    t = _timesteps(t, m0.shape[0])
    schedule.check_t(t)
    ab = _bcast(schedule.alpha_bars[t], m0)
    return ab.sqrt() * m0 + (1 - ab).sqrt() * eps


def augment_prev(schedule: NoiseSchedule, prev: torch.Tensor, generator: torch.Generator,
                 sqrt_noise: bool = False, max_t: int = PREV_NOISE_MAX_T, t=None) -> torch.Tensor:
    """Corrupt previous-window motion: ``sqrt(ab_t) m + c_t eps`` with t uniform in 1..max_t.

    ``c_t = 1 - ab_t`` by default; ``sqrt_noise=True`` uses ``sqrt(1 - ab_t)``.
    """
    B = prev.shape[0]
    if t is None:
        t = torch.randint(1, max_t + 1, (B,), generator=generator)
    t = _timesteps(t, B)
    schedule.check_t(t)
    eps = torch.randn(prev.shape, generator=generator, dtype=prev.dtype)
    ab = _bcast(schedule.alpha_bars[t], prev)
    coef = (1 - ab).sqrt() if sqrt_noise else (1 - ab)
    return ab.sqrt() * prev + coef * eps


def condition_dropout(bundle: ConditionBundle, p_audio: float, p_emotion: float,
                      generator: torch.Generator) -> ConditionBundle:
    """Independently null audio and emotion per sample. Identity and prev are never dropped."""
    for p in (p_audio, p_emotion):
        if not 0.0 <= p <= 1.0:
            raise InvalidArgumentError(f"dropout probability must be in [0, 1], got {p}")
    B = bundle.batch_size
    u_audio = torch.rand(B, generator=generator, dtype=torch.float64)
    u_emotion = torch.rand(B, generator=generator, dtype=torch.float64)
    return bundle.with_(
        audio_mask=bundle.audio_present() & (u_audio >= p_audio) if bundle.audio is not None else None,
        emotion_mask=bundle.emotion_present() & (u_emotion >= p_emotion) if bundle.emotion is not None else None,
    )


def diffusion_loss(model, schedule: NoiseSchedule, m0: torch.Tensor, bundle: ConditionBundle,
                   generator: torch.Generator, p_audio: float = 0.0, p_emotion: float = 0.0) -> torch.Tensor:
    """Mean squared noise-prediction error over batch, time and channels."""
    if m0.shape[0] == 0:
        raise EmptyInputError("empty training batch")
    bundle = condition_dropout(bundle, p_audio, p_emotion, generator)
    B = m0.shape[0]
    t = torch.randint(1, schedule.steps + 1, (B,), generator=generator)
    eps = torch.randn(m0.shape, generator=generator, dtype=m0.dtype)
    m_t = q_sample(schedule, m0, t, eps)
    return ((eps - model(m_t, t, bundle)) ** 2).mean()


def cfg_predict(model, m_t: torch.Tensor, t, bundle: ConditionBundle, w_a: float, w_e: float) -> torch.Tensor:
    """Multi-condition guidance.

    Evaluates eps(0,0), eps(a,0) and, when an emotion is present, eps(a,e), and returns
    ``(1 - w_a) eps(0,0) + (w_a - w_e) eps(a,0) + w_e eps(a,e)``, which expands to
    ``eps(0,0) + w_a [eps(a,0) - eps(0,0)] + w_e [eps(a,e) - eps(a,0)]``.
    Without an emotion the last term is skipped.
    """
    t = _timesteps(t, m_t.shape[0])
    no_emotion = bundle.without_emotion()
    eps_u = model(m_t, t, no_emotion.without_audio())
    eps_a = model(m_t, t, no_emotion)
    if bundle.emotion is None or not bool(bundle.emotion_present().any()):
        return (1 - w_a) * eps_u + w_a * eps_a
    eps_ae = model(m_t, t, bundle)
    return (1 - w_a) * eps_u + (w_a - w_e) * eps_a + w_e * eps_ae


def _randn(shape, generators, dtype=torch.float64) -> torch.Tensor:
    if isinstance(generators, torch.Generator):
        return torch.randn(shape, generator=generators, dtype=dtype)
    if len(generators) != shape[0]:
        raise InvalidArgumentError(f"{len(generators)} generators for batch of {shape[0]}")
    return torch.stack([torch.randn(shape[1:], generator=g, dtype=dtype) for g in generators])


@torch.no_grad()
def sample_window(model, schedule: NoiseSchedule, bundle: ConditionBundle, shape,
                  generators, w_a: float = 1.5, w_e: float = 1.5, x_T: torch.Tensor | None = None) -> torch.Tensor:
    """Ancestral DDPM sampling from ``x_T ~ N(0, I)`` down to a clean window.

    ``generators`` is one ``torch.Generator`` for the whole batch or one per sample;
    per-sample generators make each sample independent of its batch neighbours.
    """
    x = _randn(tuple(shape), generators) if x_T is None else x_T.clone()
    B = x.shape[0]
    for t in range(schedule.steps, 0, -1):
        tt = torch.full((B,), t, dtype=torch.long)
        eps = cfg_predict(model, x, tt, bundle, w_a, w_e)
        beta, ab = schedule.betas[t], schedule.alpha_bars[t]
        x = (x - beta / (1 - ab).sqrt() * eps) / schedule.alphas[t].sqrt()
        if t > 1:
            x = x + schedule.posterior_variance(t) ** 0.5 * _randn(tuple(x.shape), generators)
        if not bool(torch.isfinite(x).all()):
            raise NumericalDivergenceError(f"non-finite sample at diffusion step t={t}", step=t)
    return x


@torch.no_grad()
def generate_motion(model, schedule: NoiseSchedule, audio: np.ndarray, identity: np.ndarray,
                    generators: Sequence[torch.Generator], emotion: int | None = None,
                    w_a: float = 1.5, w_e: float = 1.5) -> np.ndarray:
    """Autoregressive windowed generation of normalized motion, (B, T, D).

    The audio is consumed in windows of ``W`` frames; the last window is edge-padded
    and truncated. Each window is conditioned on the last ``P`` frames generated so
    far (clean), the first on learned start tokens.
    """
    arch = model.arch
    W, P, D = arch.window, arch.prev, arch.motion_dim
    audio = np.asarray(audio, dtype=np.float64)
    T = audio.shape[0]
    if T < 1:
        raise EmptyInputError("need at least one audio frame")
    B = len(generators)
    ident = torch.as_tensor(np.asarray(identity, dtype=np.float64)).reshape(1, -1).expand(B, -1)
    emo = None if emotion is None else torch.full((B,), int(emotion), dtype=torch.long)
    out = torch.zeros(B, T, D, dtype=torch.float64)
    for s in range(0, T, W):
        n = min(W, T - s)
        chunk = audio[s:s + n]
        if n < W:
            chunk = np.concatenate([chunk, np.repeat(chunk[-1:], W - n, axis=0)])
        a = torch.as_tensor(chunk).expand(B, W, -1)
        prev = prev_mask = None
        if s > 0:
            lo = max(0, s - P)
            prev = torch.zeros(B, P, D, dtype=torch.float64)
            prev[:, P - (s - lo):] = out[:, lo:s]
            prev_mask = torch.zeros(B, P, dtype=torch.bool)
            prev_mask[:, P - (s - lo):] = True
        cond = ConditionBundle(identity=ident, audio=a, emotion=emo, prev=prev, prev_mask=prev_mask)
        window = sample_window(model, schedule, cond, (B, W, D), generators, w_a, w_e)
        out[:, s:s + n] = window[:, :n]
    return out.numpy()


def generate_sequence(model, schedule: NoiseSchedule, stats, audio, canonical_kp: np.ndarray,
                      stats_key: str, generators, emotion=None, w_a: float = 1.5, w_e: float = 1.5,
                      clip_id: str = "generated"):
    """Generate and denormalize; returns one MotionClip per generator."""
    from .clips import EMOTIONS, MotionClip, emotion_index

    feats = getattr(audio, "frames", audio)
    fps = getattr(audio, "fps", 25.0)
    emo_idx = emotion_index(emotion) if isinstance(emotion, str) else emotion
    canonical_kp = np.asarray(canonical_kp, dtype=np.float64)
    motion = generate_motion(model, schedule, feats, canonical_kp.reshape(-1), generators,
                             emo_idx, w_a, w_e)
    expression, pose = stats.denormalize_arrays(motion, stats_key)
    label = None if emo_idx is None else EMOTIONS[emo_idx]
    return [MotionClip(f"{clip_id}-{i}" if len(motion) > 1 else clip_id, canonical_kp,
                       expression[i], pose[i], feats, fps=fps, emotion=label)
            for i in range(len(motion))]
