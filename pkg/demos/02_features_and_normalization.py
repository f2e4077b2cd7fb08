# Audio features and motion normalization.
# Run: python3 demos/02_features_and_normalization.py

# %%
import numpy as np

from motionlatent.features import align_audio_to_frames, extract_toy_audio_features
from motionlatent.normalization import NormStats
from motionlatent.synthetic import SynthConfig, generate_synthetic_dataset, verify_dataset

# %% One second of a 440 Hz tone at 16 kHz gives 25 frames of 64 log band magnitudes
sr = 16000
tone = np.sin(2 * np.pi * 440.0 * np.arange(sr) / sr)
feats = extract_toy_audio_features(tone, sr)
print("frames x bands", feats.frames.shape, "loudest band", int(np.argmax(feats.frames[12])))

# other rates are resampled first, so duration and frame count agree
print("44.1 kHz frames", len(extract_toy_audio_features(np.zeros(44100), 44100)))

# a feature track can be stretched to a motion clip's frame count
print("aligned", align_audio_to_frames(feats, 30).frames.shape)

# %% Synthetic clips: expression is a fixed linear map of the audio, pose is smooth noise
cfg = SynthConfig(num_clips=3, frames_per_clip=80)
clips = generate_synthetic_dataset(cfg)
print("clips", [c.clip_id for c in clips], "map residual", verify_dataset(clips, cfg))

# %% Expression statistics are pooled over the dataset, pose statistics are per clip
stats = NormStats.from_clips(clips)
m = stats.normalize_clip(clips[0])
print("normalized motion", m.shape, "pose mean", np.round(m[:, -7:].mean(axis=0), 12))

expr, pose = stats.denormalize_arrays(m, clips[0].clip_id)
print("round trip", float(np.abs(expr - clips[0].expression).max()), float(np.abs(pose - clips[0].pose).max()))

# an unseen identity gets its pose mean from one reference frame
ref = stats.with_reference("new-face", clips[1].pose[0])
print("reference pose mean", np.round(ref.pose_stats("new-face")[0], 3))
