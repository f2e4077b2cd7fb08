"""Per-window conditioning passed to the denoiser.

Each optional condition can be absent for the whole batch (``None``) or nulled
per sample through its boolean mask (``True`` = present). Identity is always
supplied.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch


@dataclass(frozen=True)
class ConditionBundle:
    identity: torch.Tensor                      # (B, D_id)
    audio: torch.Tensor | None = None           # (B, W, D_a)
    audio_mask: torch.Tensor | None = None      # (B,)
    emotion: torch.Tensor | None = None         # (B,) long labels
    emotion_mask: torch.Tensor | None = None    # (B,)
    prev: torch.Tensor | None = None            # (B, P, D_m) previous motion
    prev_mask: torch.Tensor | None = None       # (B, P); False -> start token

    @property
    def batch_size(self) -> int:
        return self.identity.shape[0]

    def _mask(self, value, mask):
        if value is None:
            return torch.zeros(self.batch_size, dtype=torch.bool)
        if mask is None:
            return torch.ones(self.batch_size, dtype=torch.bool)
        return mask

    def audio_present(self) -> torch.Tensor:
        return self._mask(self.audio, self.audio_mask)

    def emotion_present(self) -> torch.Tensor:
        return self._mask(self.emotion, self.emotion_mask)

    def without_audio(self) -> "ConditionBundle":
        return replace(self, audio=None, audio_mask=None)

    def without_emotion(self) -> "ConditionBundle":
        return replace(self, emotion=None, emotion_mask=None)

    def with_(self, **changes) -> "ConditionBundle":
        return replace(self, **changes)
