"""Sequence layers: self-attention, conformer block and adaLN-zero DiT block.

All modules operate on ``(B, T, C)`` tensors.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError


def _check_width(x: torch.Tensor, width: int):
    if x.dim() != 3 or x.shape[-1] != width:
        raise DimensionError(f"expected (B, T, {width}) input, got {tuple(x.shape)}")


def sinusoidal_embedding(positions: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    """Standard transformer sin/cos features; ``positions`` has any shape, output adds ``dim``."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = positions.to(torch.float64)[..., None] * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise DimensionError(f"width {width} not divisible by {heads} heads")
        self.width, self.heads = width, heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def forward(self, x, return_weights: bool = False):
        _check_width(x, self.width)
        B, T, C = x.shape
        d = C // self.heads
        q, k, v = self.qkv(x).view(B, T, 3, self.heads, d).permute(2, 0, 3, 1, 4)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
        y = self.out((weights @ v).transpose(1, 2).reshape(B, T, C))
        return (y, weights) if return_weights else y


class FeedForward(nn.Module):
    def __init__(self, width: int, mult: int = 4):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, mult * width)
        self.fc2 = nn.Linear(mult * width, width)

    def forward(self, x):
        return self.fc2(F.silu(self.fc1(self.norm(x))))


class ConvModule(nn.Module):
    """Pointwise GLU, depthwise temporal conv, norm, SiLU, pointwise.

    Uses LayerNorm where the original conformer has BatchNorm so a sample's output
    never depends on the rest of the batch.
    """

    def __init__(self, width: int, kernel: int):
        super().__init__()
        if kernel % 2 == 0:
            raise DimensionError("conv kernel must be odd for 'same' padding")
        self.norm = nn.LayerNorm(width)
        self.pw1 = nn.Linear(width, 2 * width)
        self.dw = nn.Conv1d(width, width, kernel, padding=kernel // 2, groups=width)
        self.dw_norm = nn.LayerNorm(width)
        self.pw2 = nn.Linear(width, width)

    def forward(self, x):
        y = F.glu(self.pw1(self.norm(x)), dim=-1)
        y = self.dw(y.transpose(1, 2)).transpose(1, 2)
        return self.pw2(F.silu(self.dw_norm(y)))


class ConformerBlock(nn.Module):
    """Macaron conformer block: half FFN, MHSA, conv module, half FFN, final LayerNorm."""

    def __init__(self, width: int, heads: int, kernel: int):
        super().__init__()
        self.width = width
        self.ff1 = FeedForward(width)
        self.attn_norm = nn.LayerNorm(width)
        self.attn = MultiHeadSelfAttention(width, heads)
        self.conv = ConvModule(width, kernel)
        self.ff2 = FeedForward(width)
        self.final_norm = nn.LayerNorm(width)

    def forward(self, x):
        _check_width(x, self.width)
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn(self.attn_norm(x))
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        return self.final_norm(x)


def modulate(x, shift, scale):
    return x * (1 + scale[:, None, :]) + shift[:, None, :]


class DiTBlock(nn.Module):
    """Transformer block whose norms and residual gates are regressed from a condition.

    ``adaLN`` is zero-initialized by :func:`init_weights`, which makes the block an
    exact identity until it is trained.
    """

    def __init__(self, width: int, heads: int, cond_dim: int, mlp_ratio: int = 4):
        super().__init__()
        self.width, self.cond_dim = width, cond_dim
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False)
        self.attn = MultiHeadSelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False)
        self.fc1 = nn.Linear(width, mlp_ratio * width)
        self.fc2 = nn.Linear(mlp_ratio * width, width)
        self.adaLN = nn.Linear(cond_dim, 6 * width)

    def forward(self, x, cond):
        _check_width(x, self.width)
        if cond.dim() != 2 or cond.shape != (x.shape[0], self.cond_dim):
            raise DimensionError(f"cond must be ({x.shape[0]}, {self.cond_dim}), got {tuple(cond.shape)}")
        shift1, scale1, gate1, shift2, scale2, gate2 = self.adaLN(F.silu(cond)).chunk(6, dim=-1)
        x = x + gate1[:, None, :] * self.attn(modulate(self.norm1(x), shift1, scale1))
        h = self.fc2(F.silu(self.fc1(modulate(self.norm2(x), shift2, scale2))))
        return x + gate2[:, None, :] * h


class Head(nn.Module):
    """Per-frame output MLP, modulated by a condition vector.

    ``mod`` regresses a shift and scale for the input norm plus a per-channel gain
    on ``skip``, a direct path from the noisy input channels. ``mod`` and ``fc2``
    are zero-initialized, so the head outputs exactly zero at init.
    """

    def __init__(self, width: int, out_dim: int, cond_dim: int | None = None, hidden: int | None = None):
        super().__init__()
        hidden = hidden or 4 * width
        self.out_dim = out_dim
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)
        self.mod = nn.Linear(cond_dim or width, 2 * width + out_dim)

    def forward(self, x, cond=None, skip=None):
        h = self.norm(x)
        if cond is not None:
            shift, scale, gain = self.mod(F.silu(cond)).split([x.shape[-1], x.shape[-1], self.out_dim], dim=-1)
            h = modulate(h, shift, scale)
        out = self.fc2(F.silu(self.fc1(h)))
        if cond is not None and skip is not None:
            out = out + gain[:, None, :] * skip
        return out


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Xavier-uniform weights and zero biases; adaLN and head outputs start at zero."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d)):
            nn.init.xavier_uniform_(m.weight, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm) and m.elementwise_affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, DiTBlock):
            nn.init.zeros_(m.adaLN.weight)
            nn.init.zeros_(m.adaLN.bias)
        elif isinstance(m, Head):
            for lin in (m.fc2, m.mod):
                nn.init.zeros_(lin.weight)
                nn.init.zeros_(lin.bias)
