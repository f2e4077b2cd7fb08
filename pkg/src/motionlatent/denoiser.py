"""Audio-conditioned diffusion transformer over normalized motion windows.

Token layout along time is ``[P previous-motion tokens | W current tokens]``.
Every token receives the identity and timestep projections; current tokens also
receive the projected audio frame and the noisy pose. The conformer trunk only
sees pose channels of the motion (noisy and previous), so expression and emotion
can never leak into the pose prediction. The expression head combines trunk (or
emotion-branch) features with the noisy expression channels frame by frame.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .clips import EMOTIONS
from .conditions import ConditionBundle
from .emotion import EmotionControl, stage_partition
from .errors import ConfigError, DimensionError, UsageError
from .layers import ConformerBlock, Head, init_weights, sinusoidal_embedding
from .motion_space import DEFAULT_NUM_KEYPOINTS, POSE_DIM

DTYPE = torch.float64


@dataclass(frozen=True)
class ArchConfig:
    num_keypoints: int = DEFAULT_NUM_KEYPOINTS
    feature_dim: int = 64
    identity_dim: int = 0          # 0 -> 3 * num_keypoints
    width: int = 128
    blocks: int = 4
    heads: int = 4
    kernel: int = 7
    window: int = 50
    prev: int = 10
    emotion_blocks: int = 2
    num_emotions: int = len(EMOTIONS)

    def __post_init__(self):
        for name in ("num_keypoints", "feature_dim", "width", "blocks", "heads", "kernel",
                     "window", "prev", "emotion_blocks", "num_emotions"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"arch.{name} must be positive, got {getattr(self, name)}")
        if self.identity_dim < 0:
            raise ConfigError("arch.identity_dim must be >= 0")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.kernel % 2 == 0:
            raise ConfigError("conv kernel must be odd")

    @property
    def expr_dim(self) -> int:
        return 3 * self.num_keypoints

    @property
    def motion_dim(self) -> int:
        return self.expr_dim + POSE_DIM

    @property
    def id_dim(self) -> int:
        return self.identity_dim or self.expr_dim

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


class Proj(nn.Module):
    def __init__(self, in_dim: int, width: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, x):
        return self.fc2(F.silu(self.fc1(x)))


class MotionDenoiser(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        C = arch.width
        self.proj_audio = Proj(arch.feature_dim, C)
        self.proj_identity = Proj(arch.id_dim, C)
        self.proj_time = Proj(C, C)
        self.proj_prev = Proj(POSE_DIM, C)
        self.audio_null = nn.Parameter(torch.zeros(C))
        self.start_token = nn.Parameter(torch.zeros(C))
        self.pose_in = nn.Linear(POSE_DIM, C)
        self.exp_in = nn.Linear(arch.expr_dim, C)
        self.blocks = nn.ModuleList(ConformerBlock(C, arch.heads, arch.kernel) for _ in range(arch.blocks))
        self.pose_head = Head(C, POSE_DIM, C)
        self.exp_head = Head(C, arch.expr_dim, C)
        self.emotion = EmotionControl(C, arch.heads, arch.num_emotions, arch.emotion_blocks)
        self.stage2 = False

    # --- pieces ---------------------------------------------------------

    def _check_inputs(self, m_t, cond: ConditionBundle):
        a = self.arch
        if m_t.dim() != 3 or m_t.shape[-1] != a.motion_dim:
            raise DimensionError(f"m_t must be (B, W, {a.motion_dim}), got {tuple(m_t.shape)}")
        B, W, _ = m_t.shape
        if cond.identity.shape != (B, a.id_dim):
            raise DimensionError(f"identity must be ({B}, {a.id_dim}), got {tuple(cond.identity.shape)}")
        if cond.audio is not None and cond.audio.shape != (B, W, a.feature_dim):
            raise DimensionError(f"audio must be ({B}, {W}, {a.feature_dim}), got {tuple(cond.audio.shape)}")
        if cond.prev is not None and cond.prev.shape != (B, a.prev, a.motion_dim):
            raise DimensionError(f"prev must be ({B}, {a.prev}, {a.motion_dim}), got {tuple(cond.prev.shape)}")

    def time_embedding(self, t: torch.Tensor, dtype=DTYPE) -> torch.Tensor:
        return self.proj_time(sinusoidal_embedding(t.reshape(-1), self.arch.width).to(dtype))

    def trunk(self, m_t: torch.Tensor, t: torch.Tensor, cond: ConditionBundle, temb=None) -> torch.Tensor:
        """Conformer features for the current window, (B, W, C)."""
        a = self.arch
        B, W, _ = m_t.shape
        P, C = a.prev, a.width
        pose_slice = slice(a.expr_dim, a.motion_dim)

        ident = self.proj_identity(cond.identity)[:, None, :]
        if temb is None:
            temb = self.time_embedding(t, m_t.dtype)
        temb = temb[:, None, :]
        pos = sinusoidal_embedding(torch.arange(P + W), C).to(m_t.dtype)

        null = self.audio_null.expand(B, W, C)
        if cond.audio is None:
            audio = null
        else:
            audio = torch.where(cond.audio_present()[:, None, None], self.proj_audio(cond.audio), null)
        cur = self.pose_in(m_t[..., pose_slice]) + audio + ident + temb + pos[P:]

        start = self.start_token.expand(B, P, C)
        if cond.prev is None:
            prev = start
        else:
            mask = cond.prev_mask if cond.prev_mask is not None else torch.ones(B, P, dtype=torch.bool)
            prev = torch.where(mask[..., None], self.proj_prev(cond.prev[..., pose_slice]), start)
        prev = prev + ident + temb + pos[:P]

        x = torch.cat([prev, cur], dim=1)
        for block in self.blocks:
            x = block(x)
        return x[:, P:]

    def expression_features(self, h: torch.Tensor, cond: ConditionBundle) -> torch.Tensor:
        """Trunk features, replaced by the emotion branch for samples with an emotion."""
        if not self.stage2 or cond.emotion is None:
            return h
        present = cond.emotion_present()
        if not bool(present.any()):
            return h
        labels = torch.where(present, cond.emotion, torch.zeros_like(cond.emotion))
        branched = self.emotion(h, self.emotion.embed(labels))
        return torch.where(present[:, None, None], branched, h)

    def forward(self, m_t: torch.Tensor, t, cond: ConditionBundle) -> torch.Tensor:
        self._check_inputs(m_t, cond)
        t = torch.as_tensor(t).reshape(-1).expand(m_t.shape[0])
        temb = self.time_embedding(t, m_t.dtype)
        h = self.trunk(m_t, t, cond, temb)
        expr, pose = m_t[..., :self.arch.expr_dim], m_t[..., self.arch.expr_dim:]
        eps_pose = self.pose_head(h, temb, pose)
        e = self.expression_features(h, cond)
        eps_exp = self.exp_head(e + self.exp_in(expr), temb, expr)
        return torch.cat([eps_exp, eps_pose], dim=-1)

    # --- parameter bookkeeping -----------------------------------------

    def params(self) -> dict[str, torch.Tensor]:
        return dict(self.named_parameters())

    def partition(self, stage: int) -> list[str]:
        s1, s2 = stage_partition(self)
        return s1 if stage == 1 else s2

    def partition_hash(self, stage: int = 1) -> str:
        """SHA-256 over names and raw bytes of one stage's parameters."""
        params = self.params()
        digest = hashlib.sha256()
        for name in sorted(self.partition(stage)):
            digest.update(name.encode())
            digest.update(params[name].detach().contiguous().numpy().tobytes())
        return digest.hexdigest()


def init_params(arch: ArchConfig, seed: int) -> MotionDenoiser:
    """Freshly initialized float64 denoiser, bit-identical for a given seed."""
    model = MotionDenoiser(arch).to(DTYPE)
    gen = torch.Generator().manual_seed(int(seed))
    init_weights(model, gen)
    with torch.no_grad():
        model.audio_null.copy_(torch.randn(arch.width, generator=gen, dtype=DTYPE) * 0.02)
        model.start_token.copy_(torch.randn(arch.width, generator=gen, dtype=DTYPE) * 0.02)
    model.emotion.reset_table(gen)
    return model


def backward(loss: torch.Tensor, params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss; unused parameters get exact zeros."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise UsageError("loss has no recorded graph; run the forward pass with gradients enabled")
    if loss.numel() != 1:
        raise UsageError("backward needs a scalar loss")
    names = [n for n, p in params.items() if p.requires_grad]
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    out = {n: torch.zeros_like(p) for n, p in params.items()}
    for n, g in zip(names, grads):
        if g is not None:
            out[n] = g
    return out
