"""Audio conditioning features.

The pretrained speech encoder is replaced by a deterministic FFT band-energy
extractor. Externally computed features can be imported through the feature
matrix container::

    offset  size   field
    0       4      T, rows (uint32, little-endian)
    4       4      D, columns (uint32, little-endian)
    8       4*T*D  row-major float32 values, little-endian

The file size must be exactly ``8 + 4*T*D``.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import get_window, resample_poly

from .errors import DataError, FormatError, InvalidArgumentError

TARGET_SAMPLE_RATE = 16_000
WINDOW_SECONDS = 0.040
DEFAULT_FPS = 25.0
DEFAULT_FEATURE_DIM = 64
LOG_FLOOR_AMPLITUDE = 1e-10
LOG_FLOOR = float(np.log(LOG_FLOOR_AMPLITUDE))


@dataclass
class AudioFeatureSequence:
    frames: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError(f"feature matrix must be (T>=1, D), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("feature matrix contains non-finite values")
        if not self.fps > 0:
            raise InvalidArgumentError(f"fps must be positive, got {self.fps}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


def resample_to_16k(waveform: np.ndarray, sample_rate: int) -> np.ndarray:
    if sample_rate == TARGET_SAMPLE_RATE:
        return waveform
    ratio = Fraction(TARGET_SAMPLE_RATE, int(sample_rate))
    return resample_poly(waveform, ratio.numerator, ratio.denominator)


def frame_signal(signal: np.ndarray, num_frames: int, fps: float,
                 window: int = int(WINDOW_SECONDS * TARGET_SAMPLE_RATE)) -> np.ndarray:
    """Cut ``window``-sample frames centred on each video frame midpoint, zero padded."""
    half = window // 2
    padded = np.concatenate([np.zeros(half), signal, np.zeros(window)])
    centers = np.round((np.arange(num_frames) + 0.5) * TARGET_SAMPLE_RATE / fps).astype(int)
    idx = centers[:, None] + np.arange(window)[None, :]
    return padded[idx]


def band_edges(n_bins: int, n_bands: int) -> np.ndarray:
    """Bin index boundaries splitting ``n_bins`` rFFT bins into equal-width bands."""
    return np.linspace(0, n_bins, n_bands + 1).round().astype(int)


def extract_toy_audio_features(waveform, sample_rate: int, fps: float = DEFAULT_FPS,
                               n_bands: int = DEFAULT_FEATURE_DIM) -> AudioFeatureSequence:
    """Log band magnitudes of Hann-windowed 40 ms frames, one row per video frame.

    Silence maps to ``LOG_FLOOR`` in every band.
    """
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DataError("waveform must be a non-empty mono signal")
    if sample_rate < 8000:
        raise DataError(f"unsupported sample rate {sample_rate} (need >= 8000 Hz)")
    x = resample_to_16k(x, sample_rate)
    num_frames = max(1, int(np.floor(x.size * fps / TARGET_SAMPLE_RATE + 1e-9)))
    frames = frame_signal(x, num_frames, fps)
    spectrum = np.abs(np.fft.rfft(frames * get_window("hann", frames.shape[1]), axis=1))
    edges = band_edges(spectrum.shape[1], n_bands)
    bands = np.stack([spectrum[:, lo:hi].mean(axis=1) for lo, hi in zip(edges[:-1], edges[1:])], axis=1)
    return AudioFeatureSequence(np.log(np.maximum(bands, LOG_FLOOR_AMPLITUDE)), fps)


def align_audio_to_frames(features: AudioFeatureSequence, target_len: int) -> AudioFeatureSequence:
    """Linearly resample the feature rows to exactly ``target_len`` rows."""
    if target_len < 1:
        raise DataError(f"target_len must be >= 1, got {target_len}")
    src = features.frames
    T = src.shape[0]
    if target_len == T:
        return AudioFeatureSequence(src.copy(), features.fps)
    if T == 1:
        return AudioFeatureSequence(np.repeat(src, target_len, axis=0), features.fps * target_len)
    pos = np.linspace(0.0, T - 1.0, target_len)
    lo = np.minimum(np.floor(pos).astype(int), T - 2)
    frac = (pos - lo)[:, None]
    out = src[lo] * (1.0 - frac) + src[lo + 1] * frac
    return AudioFeatureSequence(out, features.fps * target_len / T)


def read_wav(path) -> tuple[np.ndarray, int]:
    """16-bit PCM WAV -> (mono float samples in [-1, 1), sample rate). Stereo is averaged."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getsampwidth() != 2:
                raise FormatError(f"only 16-bit PCM is supported, got {8 * w.getsampwidth()}-bit")
            channels, rate, n = w.getnchannels(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except wave.Error as exc:
        raise FormatError(f"invalid WAV file: {exc}") from None
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return data, rate


def write_wav(path, samples, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1 if pcm.ndim == 1 else pcm.shape[1])
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


_FEAT_HEADER = struct.Struct("<II")


def save_feature_matrix(features, path) -> None:
    arr = np.asarray(getattr(features, "frames", features), dtype="<f4")
    T, D = arr.shape
    Path(path).write_bytes(_FEAT_HEADER.pack(T, D) + np.ascontiguousarray(arr).tobytes())


def load_feature_matrix(path, fps: float = DEFAULT_FPS) -> AudioFeatureSequence:
    data = Path(path).read_bytes()
    if len(data) < _FEAT_HEADER.size:
        raise FormatError("truncated feature header", offset=len(data))
    T, D = _FEAT_HEADER.unpack_from(data, 0)
    expected = _FEAT_HEADER.size + 4 * T * D
    if len(data) != expected:
        raise FormatError(f"feature file has {len(data)} bytes, header implies {expected}",
                          offset=min(len(data), expected))
    mat = np.frombuffer(data, dtype="<f4", offset=_FEAT_HEADER.size).reshape(T, D)
    return AudioFeatureSequence(mat.astype(np.float64), fps)


def load_audio_features(path, fps: float = DEFAULT_FPS) -> AudioFeatureSequence:
    """WAV files go through the toy extractor; anything else is read as a feature matrix."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"RIFF":
        samples, rate = read_wav(path)
        return extract_toy_audio_features(samples, rate, fps)
    return load_feature_matrix(path, fps)
