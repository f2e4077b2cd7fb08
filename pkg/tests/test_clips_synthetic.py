import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motionlatent.clips import MotionClip, clip_from_bytes, clip_to_bytes, load_clip, load_dataset, save_clip, save_dataset
from motionlatent.errors import ConfigError, DimensionError, EmptyInputError, FormatError, InvalidArgumentError
from motionlatent.synthetic import (SynthConfig, expected_expression, generate_synthetic_dataset, generating_map,
                                    planted_emotion_offsets, verify_dataset)


def small_config(**kw):
    base = dict(num_clips=3, frames_per_clip=40, num_keypoints=5, feature_dim=16)
    base.update(kw)
    return SynthConfig(**base)


def test_clip_round_trip(tmp_path):
    clip = generate_synthetic_dataset(small_config(emotions=("happy",)))[0]
    save_clip(clip, tmp_path / "c.clip")
    assert load_clip(tmp_path / "c.clip") == clip


@settings(max_examples=30)
@given(st.integers(1, 12), st.integers(1, 6), st.integers(1, 5), st.sampled_from([None, "sad", "neutral"]),
       st.text(max_size=8))
def test_bytes_round_trip_property(T, K, D, emotion, cid):
    rng = np.random.default_rng(T * 100 + K)
    clip = MotionClip(cid, rng.standard_normal((K, 3)), rng.standard_normal((T, K, 3)),
                      rng.standard_normal((T, 7)), rng.standard_normal((T, D)), fps=30.0, emotion=emotion)
    assert clip_from_bytes(clip_to_bytes(clip)) == clip


def test_truncated_and_corrupt_files_rejected():
    data = clip_to_bytes(generate_synthetic_dataset(small_config())[0])
    for cut in (0, 10, 40, len(data) - 1):
        with pytest.raises(FormatError):
            clip_from_bytes(data[:cut])
    with pytest.raises(FormatError):
        clip_from_bytes(data + b"\0")
    with pytest.raises(FormatError):
        clip_from_bytes(b"X" + data[1:])


def test_format_error_reports_offset():
    data = clip_to_bytes(generate_synthetic_dataset(small_config())[0])
    with pytest.raises(FormatError, match="offset"):
        clip_from_bytes(data[:-8])


def test_empty_clip_rejected_at_save(tmp_path):
    clip = MotionClip("e", np.zeros((2, 3)), np.zeros((0, 2, 3)), np.zeros((0, 7)), np.zeros((0, 4)))
    with pytest.raises(EmptyInputError):
        save_clip(clip, tmp_path / "e.clip")
    assert not (tmp_path / "e.clip").exists()


def test_clip_validation():
    with pytest.raises(DimensionError):
        MotionClip("x", np.zeros((2, 3)), np.zeros((3, 2, 3)), np.zeros((4, 7)), np.zeros((3, 1)))
    with pytest.raises(InvalidArgumentError):
        MotionClip("x", np.zeros((2, 3)), np.zeros((3, 2, 3)), np.zeros((3, 7)), np.zeros((3, 1)), emotion="bored")


def test_dataset_dir_round_trip(tmp_path):
    clips = generate_synthetic_dataset(small_config())
    save_dataset(clips, tmp_path / "d")
    assert load_dataset(tmp_path / "d") == clips
    with pytest.raises(EmptyInputError):
        load_dataset(tmp_path)


def test_same_seed_bit_identical():
    a = generate_synthetic_dataset(small_config(seed=4))
    b = generate_synthetic_dataset(small_config(seed=4))
    assert all(x == y for x, y in zip(a, b))
    c = generate_synthetic_dataset(small_config(seed=5))
    assert not np.array_equal(a[0].audio, c[0].audio)


def test_seed_changes_clips_but_not_map():
    a = generate_synthetic_dataset(small_config(seed=1))[0]
    b = generate_synthetic_dataset(small_config(seed=2))[0]
    cfg = small_config()
    np.testing.assert_allclose(expected_expression(b, cfg), b.expression, atol=1e-12)
    assert not np.array_equal(a.expression, b.expression)


def test_verification_pass():
    cfg = small_config(emotions=("neutral", "happy"),
                       emotion_offsets=planted_emotion_offsets(generating_map(small_config()), ("neutral", "happy")))
    assert verify_dataset(generate_synthetic_dataset(cfg), cfg) < 1e-10


def test_neutral_offset_is_zero():
    offs = planted_emotion_offsets(generating_map(small_config()), ("neutral", "happy", "sad"))
    assert np.all(offs["neutral"] == 0)
    assert np.any(offs["happy"] != 0)
    with pytest.raises(ConfigError):
        small_config(emotion_offsets={"neutral": np.ones((5, 3))})


def test_audio_band_drives_expression_component():
    cfg = SynthConfig(num_clips=1, frames_per_clip=1000)
    clip = generate_synthetic_dataset(cfg)[0]
    r = np.corrcoef(clip.audio[:, 0], clip.expression.reshape(1000, -1)[:, 0])[0, 1]
    assert abs(r) > 0.9


def test_offsets_reachable_from_audio():
    gmap = generating_map(small_config())
    offs = planted_emotion_offsets(gmap, ("happy",))
    flat = offs["happy"].reshape(-1)
    span = gmap.expr_map @ gmap.mix.T
    coef, *_ = np.linalg.lstsq(span, flat, rcond=None)
    np.testing.assert_allclose(span @ coef, flat, atol=1e-10)
