"""Two-stage training: Adam, batch assembly, checkpoints and run configuration.

Stage 1 trains the whole denoiser except the emotion branch. Stage 2 loads a
stage-1 checkpoint, freezes it and optimizes only the ``emotion.*`` partition.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .checkpoint import read_container, write_container
from .clips import emotion_index
from .conditions import ConditionBundle
from .denoiser import DTYPE, ArchConfig, MotionDenoiser, backward, init_params
from .diffusion import NoiseSchedule, augment_prev, diffusion_loss
from .emotion import init_stage2, wire_stage2
from .errors import (BackboneMismatchError, ConfigError, DimensionError, EmptyInputError,
                     FormatError, NumericalDivergenceError)
from .normalization import NormStats

log = logging.getLogger(__name__)

ENV_PREFIX = "PLAY_"


@dataclass
class TrainConfig:
    stage: int = 1
    steps: int = 1000
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    p_audio: float = 0.1
    p_emotion: float = 0.1
    seed: int = 0
    dataset: str = ""
    stats: str = ""
    backbone: str = ""
    out: str = "checkpoint.ckpt"
    checkpoint_every: int = 0
    log_every: int = 100
    window: int = 50
    prev: int = 10
    width: int = 128
    blocks: int = 4
    heads: int = 4
    kernel: int = 7
    diffusion_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    prev_noise_max_t: int = 50
    prev_noise_sqrt: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        for name in ("steps", "batch_size", "window", "prev", "width", "blocks", "heads",
                     "kernel", "diffusion_steps", "prev_noise_max_t"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("p_audio", "p_emotion"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.checkpoint_every < 0 or self.log_every < 0:
            raise ConfigError("checkpoint_every and log_every must be >= 0")
        if self.prev_noise_max_t > self.diffusion_steps:
            raise ConfigError("prev_noise_max_t exceeds diffusion_steps")

    def require_backbone(self):
        if self.stage == 2 and not self.backbone:
            raise ConfigError("stage 2 requires a stage-1 checkpoint in 'backbone'")

    def arch(self, num_keypoints: int, feature_dim: int) -> ArchConfig:
        return ArchConfig(num_keypoints=num_keypoints, feature_dim=feature_dim, width=self.width,
                          blocks=self.blocks, heads=self.heads, kernel=self.kernel,
                          window=self.window, prev=self.prev)

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.linear(self.diffusion_steps, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# --- flat key/value config ----------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def coerce_value(key: str, raw):
    """Convert a string to the declared type of ``TrainConfig.<key>``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None
    return raw


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Unknown or repeated keys are errors."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = coerce_value(key, value)
    return out


def format_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"


def load_config(path=None, env=None, overrides: dict | None = None) -> TrainConfig:
    """Defaults < config file < ``PLAY_<KEY>`` environment variables < explicit overrides."""
    values = {}
    if path:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    env = os.environ if env is None else env
    for key in _FIELDS:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = coerce_value(key, env[name])
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = coerce_value(key, value)
    return TrainConfig(**values)


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, names) -> AdamState:
    return AdamState(0, {n: torch.zeros_like(params[n]) for n in names},
                     {n: torch.zeros_like(params[n]) for n in names})


@torch.no_grad()
def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update of the parameters named in ``state`` (in place).

    Parameters outside the state's partition are not touched.
    """
    state.step += 1
    c1 = 1 - beta1 ** state.step
    c2 = 1 - beta2 ** state.step
    for name in state.m:
        p, g = params[name], grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
        m = state.m[name].mul_(beta1).add_(g, alpha=1 - beta1)
        v = state.v[name].mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params, state


# --- data ---------------------------------------------------------------------

class WindowDataset:
    """Normalized motion/audio arrays and the list of trainable window positions."""

    def __init__(self, clips, stats: NormStats, window: int, prev: int):
        if not clips:
            raise EmptyInputError("no training clips")
        self.window, self.prev = window, prev
        self.motion, self.audio, self.identity, self.emotion = [], [], [], []
        self.index = []
        for ci, clip in enumerate(clips):
            if len(clip) < window:
                raise DimensionError(f"clip {clip.clip_id} has {len(clip)} frames < window {window}")
            self.motion.append(torch.from_numpy(stats.normalize_clip(clip)))
            self.audio.append(torch.from_numpy(clip.audio))
            self.identity.append(torch.from_numpy(clip.identity.copy()))
            self.emotion.append(-1 if clip.emotion is None else emotion_index(clip.emotion))
            self.index.extend((ci, s) for s in range(len(clip) - window + 1))
        self.has_emotion = any(e >= 0 for e in self.emotion)

    def __len__(self):
        return len(self.index)

    def batch(self, positions) -> tuple[torch.Tensor, ConditionBundle]:
        W, P = self.window, self.prev
        m0, audio, ident, emo, prev, prev_mask = [], [], [], [], [], []
        for k in positions:
            ci, s = self.index[k]
            m = self.motion[ci]
            m0.append(m[s:s + W])
            audio.append(self.audio[ci][s:s + W])
            ident.append(self.identity[ci])
            emo.append(self.emotion[ci])
            p = torch.zeros(P, m.shape[1], dtype=m.dtype)
            mask = torch.zeros(P, dtype=torch.bool)
            lo = max(0, s - P)
            if s > lo:
                p[P - (s - lo):] = m[lo:s]
                mask[P - (s - lo):] = True
            prev.append(p)
            prev_mask.append(mask)
        emo = torch.tensor(emo, dtype=torch.long)
        bundle = ConditionBundle(
            identity=torch.stack(ident), audio=torch.stack(audio),
            emotion=emo.clamp(min=0) if self.has_emotion else None,
            emotion_mask=(emo >= 0) if self.has_emotion else None,
            prev=torch.stack(prev), prev_mask=torch.stack(prev_mask))
        return torch.stack(m0), bundle


# --- trainer ------------------------------------------------------------------

class Trainer:
    """Deterministic training loop for either stage.

    All randomness (data order, prev-window noise, condition dropout, timesteps and
    diffusion noise) comes from one ``torch.Generator`` whose state is checkpointed,
    so a resumed run continues bit-exactly.
    """

    def __init__(self, config: TrainConfig, clips, stats: NormStats, model: MotionDenoiser | None = None,
                 backbone_hash: str | None = None):
        config.validate()
        self.config = config
        self.stats = stats
        self.schedule = config.schedule()
        self.data = WindowDataset(clips, stats, config.window, config.prev)
        K, D_a = clips[0].num_keypoints, clips[0].audio.shape[1]
        if model is None:
            if config.stage == 2:
                raise ConfigError("stage 2 needs the stage-1 model")
            model = init_params(config.arch(K, D_a), config.seed)
        self.model = model
        self.arch = model.arch
        if config.stage == 2:
            if backbone_hash is None:
                init_stage2(model, config.seed)
            wire_stage2(model)
            self.backbone_hash = backbone_hash or model.partition_hash(1)
        else:
            self.backbone_hash = None
        self.names = model.partition(config.stage)
        frozen = set(model.partition(1 if config.stage == 2 else 2))
        for name, p in model.named_parameters():
            p.requires_grad_(name not in frozen)
        self.adam = adam_init(model.params(), self.names)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.order = torch.empty(0, dtype=torch.long)
        self.cursor = 0
        self.step_count = 0
        self.losses: list[float] = []

    def _next_positions(self) -> list[int]:
        out = []
        while len(out) < self.config.batch_size:
            if self.cursor >= len(self.order):
                self.order = torch.randperm(len(self.data), generator=self.generator)
                self.cursor = 0
            take = min(self.config.batch_size - len(out), len(self.order) - self.cursor)
            out.extend(self.order[self.cursor:self.cursor + take].tolist())
            self.cursor += take
        return out

    def loss_on(self, m0, bundle, generator, dropout: bool = True, augment: bool = True):
        cfg = self.config
        if augment and bundle.prev is not None:
            noisy = augment_prev(self.schedule, bundle.prev, generator, cfg.prev_noise_sqrt, cfg.prev_noise_max_t)
            bundle = bundle.with_(prev=noisy)
        p_a, p_e = (cfg.p_audio, cfg.p_emotion) if dropout else (0.0, 0.0)
        return diffusion_loss(self.model, self.schedule, m0, bundle, generator, p_a, p_e)

    def step(self) -> float:
        m0, bundle = self.data.batch(self._next_positions())
        loss = self.loss_on(m0, bundle, self.generator)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NumericalDivergenceError(f"non-finite loss at step {self.step_count}", step=self.step_count)
        grads = backward(loss, self.model.params())
        cfg = self.config
        adam_step(self.model.params(), grads, self.adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.step_count += 1
        self.losses.append(value)
        return value

    def run(self, steps: int | None = None, callback: Callable | None = None, checkpoint_path=None) -> list[float]:
        steps = self.config.steps - self.step_count if steps is None else steps
        cfg = self.config
        out = []
        for _ in range(steps):
            loss = self.step()
            out.append(loss)
            if cfg.log_every and self.step_count % cfg.log_every == 0:
                log.info("stage %d step %d loss %.6f", cfg.stage, self.step_count, loss)
            if callback is not None:
                callback(self.step_count, loss)
            if checkpoint_path and cfg.checkpoint_every and self.step_count % cfg.checkpoint_every == 0:
                self.save(checkpoint_path)
        return out

    @torch.no_grad()
    def evaluate(self, positions, seed: int = 0, repeats: int = 1, clips=None) -> float:
        """Noise-prediction loss on fixed windows with fixed noise, no dropout or augmentation."""
        data = self.data if clips is None else WindowDataset(clips, self.stats, self.config.window, self.config.prev)
        gen = torch.Generator().manual_seed(seed)
        m0, bundle = data.batch(positions)
        total = 0.0
        for _ in range(repeats):
            total += float(self.loss_on(m0, bundle, gen, dropout=False, augment=False))
        return total / repeats

    # --- checkpoints ------------------------------------------------------

    def save(self, path) -> None:
        cfg = self.config
        if cfg.stage == 2 and self.model.partition_hash(1) != self.backbone_hash:
            raise BackboneMismatchError("stage-1 parameters changed during stage-2 training")
        params = self.model.params()
        tensors = {}
        for n in self.names:
            tensors["param/" + n] = params[n]
            tensors["adam_m/" + n] = self.adam.m[n]
            tensors["adam_v/" + n] = self.adam.v[n]
        tensors["state/rng"] = self.generator.get_state()
        tensors["state/order"] = self.order
        meta = {
            "kind": f"stage{cfg.stage}",
            "arch": self.arch.to_dict(),
            "arch_hash": self.arch.hash(),
            "stage": cfg.stage,
            "step": self.step_count,
            "adam_step": self.adam.step,
            "cursor": self.cursor,
            # the output location is not a training input, so it stays out of the bytes
            "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
            "stats": self.stats.to_json(),
            "stage1_hash": self.backbone_hash if cfg.stage == 2 else self.model.partition_hash(1),
            "backbone_hash": self.backbone_hash,
        }
        write_container(path, meta, tensors)

    @classmethod
    def resume(cls, path, clips, backbone=None) -> "Trainer":
        """Rebuild a trainer from a checkpoint; stage 2 also needs the stage-1 checkpoint path."""
        meta, tensors = read_container(path)
        config = TrainConfig(**{**meta["config"], "out": str(path)})
        stats = NormStats.from_json(meta["stats"])
        if meta["stage"] == 2:
            model = load_model(backbone or config.backbone)
            _load_stage2_into(model, meta, tensors)
        else:
            model = _model_from(meta, tensors)
        trainer = cls(config, clips, stats, model=model, backbone_hash=meta["backbone_hash"])
        for n in trainer.names:
            trainer.adam.m[n] = torch.from_numpy(tensors["adam_m/" + n].copy())
            trainer.adam.v[n] = torch.from_numpy(tensors["adam_v/" + n].copy())
        trainer.adam.step = meta["adam_step"]
        trainer.generator.set_state(torch.from_numpy(tensors["state/rng"].copy()))
        trainer.order = torch.from_numpy(tensors["state/order"].copy())
        trainer.cursor = meta["cursor"]
        trainer.step_count = meta["step"]
        return trainer


def _model_from(meta: dict, tensors: dict) -> MotionDenoiser:
    arch = ArchConfig(**meta["arch"])
    if arch.hash() != meta["arch_hash"]:
        raise FormatError("architecture hash mismatch")
    model = MotionDenoiser(arch).to(DTYPE)
    init_stage2(model, 0)
    _assign(model, tensors, model.partition(1))
    return model


def _assign(model: MotionDenoiser, tensors: dict, names) -> None:
    params = model.params()
    stored = {k[len("param/"):] for k in tensors if k.startswith("param/")}
    if stored != set(names):
        missing, extra = set(names) - stored, stored - set(names)
        raise FormatError(f"checkpoint parameter names mismatch (missing {sorted(missing)[:5]}, "
                          f"unexpected {sorted(extra)[:5]})")
    with torch.no_grad():
        for n in names:
            arr = tensors["param/" + n]
            if tuple(arr.shape) != tuple(params[n].shape):
                raise FormatError(f"shape mismatch for {n}: {arr.shape} vs {tuple(params[n].shape)}")
            params[n].copy_(torch.from_numpy(arr.copy()))


def _load_stage2_into(model: MotionDenoiser, meta: dict, tensors: dict) -> None:
    if meta.get("stage") != 2:
        raise FormatError("not a stage-2 checkpoint")
    if model.arch.hash() != meta["arch_hash"]:
        raise BackboneMismatchError("stage-2 checkpoint was trained on a different architecture")
    if model.partition_hash(1) != meta["backbone_hash"]:
        raise BackboneMismatchError("stage-2 checkpoint does not match this stage-1 backbone")
    _assign(model, tensors, model.partition(2))
    wire_stage2(model)


def load_model(path, emotion=None) -> MotionDenoiser:
    """Load a stage-1 checkpoint, optionally with a stage-2 emotion checkpoint on top."""
    meta, tensors = read_container(path)
    if meta.get("stage") != 1:
        raise FormatError(f"{path} is not a stage-1 checkpoint (stage={meta.get('stage')})")
    model = _model_from(meta, tensors)
    if emotion is not None:
        m2, t2 = read_container(emotion)
        _load_stage2_into(model, m2, t2)
    return model


def load_stage2(path, backbone: MotionDenoiser) -> MotionDenoiser:
    """Attach a stage-2 checkpoint to an already loaded backbone (checked by hash)."""
    meta, tensors = read_container(path)
    _load_stage2_into(backbone, meta, tensors)
    return backbone


def checkpoint_meta(path) -> dict:
    return read_container(path)[0]


def checkpoint_stats(path) -> NormStats:
    return NormStats.from_json(read_container(path)[0]["stats"])


def train_stage1(config: TrainConfig, clips, stats: NormStats | None = None, callback=None) -> Trainer:
    stats = stats or NormStats.from_clips(clips)
    trainer = Trainer(config, clips, stats)
    trainer.run(callback=callback, checkpoint_path=config.out)
    trainer.save(config.out)
    return trainer


def train_stage2(config: TrainConfig, clips, callback=None) -> Trainer:
    """Freeze a stage-1 checkpoint and train the emotion branch on labelled clips."""
    config.require_backbone()
    meta, _ = read_container(config.backbone)
    base_stats = NormStats.from_json(meta["stats"])
    stats = base_stats.with_clips(clips)
    model = load_model(config.backbone)
    trainer = Trainer(config, clips, stats, model=model)
    trainer.run(callback=callback, checkpoint_path=config.out)
    trainer.save(config.out)
    return trainer
