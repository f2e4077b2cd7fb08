"""Stage-2 emotion branch.

Two DiT blocks read the conformer trunk output, conditioned on a learned emotion
embedding; their output replaces the trunk features fed to the expression head.
The pose head keeps reading the trunk, so emotion can only move expression.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .clips import EMOTIONS, emotion_index
from .errors import DimensionError, InvalidArgumentError
from .layers import DiTBlock, init_weights

STAGE2_PREFIX = "emotion."


class EmotionControl(nn.Module):
    def __init__(self, width: int, heads: int, num_emotions: int = len(EMOTIONS), num_blocks: int = 2):
        super().__init__()
        self.width = width
        self.table = nn.Parameter(torch.empty(num_emotions, width))
        self.blocks = nn.ModuleList(DiTBlock(width, heads, width) for _ in range(num_blocks))

    def reset_table(self, generator: torch.Generator, std: float = 1.0):
        with torch.no_grad():
            self.table.copy_(torch.randn(self.table.shape, generator=generator, dtype=self.table.dtype) * std)

    def embed(self, labels: torch.Tensor) -> torch.Tensor:
        labels = torch.as_tensor(labels, dtype=torch.long)
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.table.shape[0]):
            raise InvalidArgumentError(f"emotion label out of range: {labels.tolist()}")
        return self.table[labels]

    def forward(self, trunk_out: torch.Tensor, f_e: torch.Tensor) -> torch.Tensor:
        """``block2(block1(trunk_out, f_e), f_e)``; ``f_e`` is (B, width) embeddings."""
        if trunk_out.dim() != 3 or trunk_out.shape[-1] != self.width:
            raise DimensionError(f"trunk output must be (B, T, {self.width}), got {tuple(trunk_out.shape)}")
        x = trunk_out
        for block in self.blocks:
            x = block(x, f_e)
        return x


def init_stage2(model, seed: int) -> None:
    """Fresh stage-2 parameters; the zeroed adaLN gates make the branch start as identity."""
    gen = torch.Generator().manual_seed(int(seed))
    init_weights(model.emotion, gen)
    model.emotion.reset_table(gen)


def emotion_embed(model, label) -> torch.Tensor:
    """Embedding row for a label name or index."""
    idx = emotion_index(label) if isinstance(label, str) else int(label)
    return model.emotion.embed(torch.tensor([idx]))[0]


def emotion_branch_forward(model, trunk_out: torch.Tensor, f_e: torch.Tensor | None) -> torch.Tensor:
    """Emotion-modulated features for the expression head; ``None`` bypasses the branch."""
    if f_e is None:
        return trunk_out
    if f_e.dim() == 1:
        f_e = f_e.expand(trunk_out.shape[0], -1)
    return model.emotion(trunk_out, f_e)


class Routing(NamedTuple):
    pose_head_input: str
    exp_head_input: str


def wire_stage2(model, enabled: bool = True) -> Routing:
    """Route the expression head through the emotion branch whenever an emotion is given."""
    model.stage2 = bool(enabled)
    return routing(model)


def routing(model) -> Routing:
    exp_src = "emotion_branch_if_emotion_present" if model.stage2 else "trunk"
    return Routing("trunk", exp_src)


def stage_partition(model) -> tuple[list[str], list[str]]:
    """Names of stage-1 (backbone) and stage-2 (emotion) parameters."""
    names = [n for n, _ in model.named_parameters()]
    stage2 = [n for n in names if n.startswith(STAGE2_PREFIX)]
    stage1 = [n for n in names if not n.startswith(STAGE2_PREFIX)]
    return stage1, stage2
