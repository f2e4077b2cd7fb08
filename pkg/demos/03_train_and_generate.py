# Train a small stage-1 model, generate motion for held-out audio and score it.
# Takes a couple of minutes on one CPU core.
# Run: python3 demos/03_train_and_generate.py [out_dir]

# %%
import dataclasses
import sys
from pathlib import Path

import numpy as np
import torch

from motionlatent.diffusion import generate_sequence
from motionlatent.metrics import boundary_ratio, evaluate_clips
from motionlatent.normalization import NormStats
from motionlatent.plotting import emit_plots
from motionlatent.synthetic import SynthConfig, expected_expression, generate_synthetic_dataset
from motionlatent.training import TrainConfig, Trainer

torch.set_num_threads(1)
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# %% Small data and a small model so this runs quickly
data_cfg = SynthConfig(num_clips=4, frames_per_clip=120, num_keypoints=6, feature_dim=16)
clips = generate_synthetic_dataset(data_cfg)
config = TrainConfig(steps=600, width=32, blocks=1, heads=4, lr=1e-3, window=24, prev=6, diffusion_steps=200,
                     prev_noise_max_t=10, log_every=100)
trainer = Trainer(config, clips, NormStats.from_clips(clips))
probe = list(range(0, len(trainer.data), 7))[:32]
before = trainer.evaluate(probe, seed=1)
trainer.run()
after = trainer.evaluate(probe, seed=1)
print(f"fixed-noise loss {before:.3f} -> {after:.3f}")
trainer.save(out / "stage1.ckpt")

# %% Generate for a clip the model never saw, two seeds
held = generate_synthetic_dataset(dataclasses.replace(data_cfg, num_clips=1, seed=42, clip_prefix="held"))[0]
stats = trainer.stats.with_reference("held", held.pose[0])
gens = [torch.Generator().manual_seed(s) for s in (0, 1)]
samples = generate_sequence(trainer.model, trainer.schedule, stats, held.audio, held.canonical_kp, "held", gens)
target = expected_expression(held, data_cfg)
for c in samples:
    mse = float((((c.expression - target) / trainer.stats.expr_std) ** 2).mean())
    print(f"{c.clip_id}: expression mse {mse:.3f}, window boundary ratio {boundary_ratio(c.pose, config.window):.2f}")

# %% Metrics against the held-out clip and a plot of the first sample
report = evaluate_clips(samples, [held, held], seed=0)
print(report.to_json())
print("wrote", *emit_plots(samples[0], out / "sample0"))
