"""Audio-driven facial motion generation in an implicit-keypoint latent space.

Motion per frame is an expression offset field plus a 7-D head pose; a
conformer denoiser trained with DDPM generates normalized motion windows from
audio features, and a separately trained emotion branch steers expression.
"""

__version__ = "0.1.0"

from .clips import EMOTIONS, MotionClip, load_clip, load_dataset, save_clip, save_dataset
from .conditions import ConditionBundle
from .denoiser import ArchConfig, MotionDenoiser, backward, init_params
from .diffusion import (NoiseSchedule, augment_prev, cfg_predict, diffusion_loss, generate_motion,
                        generate_sequence, q_sample, sample_window)
from .errors import (BackboneMismatchError, ConfigError, DataError, DimensionError, FormatError,
                     MotionLatentError, NumericalDivergenceError, NumericalError)
from .features import AudioFeatureSequence, extract_toy_audio_features
from .metrics import (EvalReport, metric_akd, metric_apd, metric_emotion_separation, metric_jitter,
                      metric_traj_mse)
from .motion_space import (MotionFrame, apply_motion, euler_to_rotation, latent_transfer_consistency,
                           transfer_expression, transfer_pose)
from .normalization import NormStats, denormalize, normalize
from .synthetic import SynthConfig, generate_synthetic_dataset
from .training import TrainConfig, Trainer, adam_step, load_model, train_stage1, train_stage2
