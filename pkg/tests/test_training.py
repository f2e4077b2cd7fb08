import dataclasses

import numpy as np
import pytest
import torch

from motionlatent.checkpoint import file_sha256, read_container, write_container
from motionlatent.errors import BackboneMismatchError, ConfigError, FormatError, NumericalDivergenceError
from motionlatent.normalization import NormStats
from motionlatent.synthetic import SynthConfig, generate_synthetic_dataset, generating_map, planted_emotion_offsets
from motionlatent.training import (AdamState, TrainConfig, Trainer, adam_init, adam_step, load_config, load_model,
                                   load_stage2, parse_config_text, train_stage1, train_stage2)

torch.set_num_threads(1)

SMALL = dict(width=16, blocks=1, heads=2, kernel=3, window=8, prev=3, batch_size=4, lr=1e-3, log_every=0,
             diffusion_steps=100, prev_noise_max_t=10)


def data(emotions=None, seed=0, n=2):
    base = SynthConfig(num_clips=n, frames_per_clip=20, num_keypoints=3, feature_dim=8, seed=seed)
    if emotions:
        offs = planted_emotion_offsets(generating_map(base), emotions, 2.0)
        base = dataclasses.replace(base, emotions=emotions, emotion_offsets=offs)
    return generate_synthetic_dataset(base)


def cfg(**kw):
    return TrainConfig(**{**SMALL, **kw})


# --- Adam -------------------------------------------------------------------

def test_adam_first_step_on_square():
    x = torch.tensor([1.0], dtype=torch.float64)
    params = {"x": x}
    state = adam_init(params, ["x"])
    adam_step(params, {"x": 2 * x.clone()}, state, lr=0.1)
    assert abs(float(x) - 0.9) < 1e-7


def test_adam_zero_gradient_from_fresh_state_leaves_params():
    p = torch.randn(4, dtype=torch.float64)
    before = p.clone()
    state = adam_init({"p": p}, ["p"])
    adam_step({"p": p}, {"p": torch.zeros(4, dtype=torch.float64)}, state, lr=0.1)
    assert torch.equal(p, before) and torch.count_nonzero(state.m["p"]) == 0


def test_adam_zero_gradient_decays_moments():
    p = torch.zeros(3, dtype=torch.float64)
    state = AdamState(5, {"p": torch.ones(3, dtype=torch.float64)}, {"p": torch.full((3,), 2.0, dtype=torch.float64)})
    adam_step({"p": p}, {"p": torch.zeros(3, dtype=torch.float64)}, state, lr=0.1, beta1=0.9, beta2=0.99)
    assert torch.equal(state.m["p"], torch.full((3,), 0.9, dtype=torch.float64))
    assert torch.equal(state.v["p"], torch.full((3,), 2.0 * 0.99, dtype=torch.float64))


def test_adam_partition_isolation():
    params = {"a": torch.ones(2, dtype=torch.float64), "b": torch.ones(2, dtype=torch.float64)}
    b_before = params["b"].clone()
    state = adam_init(params, ["a"])
    adam_step(params, {"a": torch.ones(2, dtype=torch.float64), "b": torch.ones(2, dtype=torch.float64)}, state, 0.1)
    assert torch.equal(params["b"], b_before) and not torch.equal(params["a"], b_before)


# --- configuration ------------------------------------------------------------

def test_config_defaults_follow_training_recipe():
    c = TrainConfig()
    assert (c.lr, c.batch_size, c.p_audio, c.p_emotion) == (1e-4, 32, 0.1, 0.1)
    assert (c.window, c.prev, c.width, c.blocks, c.heads, c.kernel) == (50, 10, 128, 4, 4, 7)


def test_config_validation():
    for bad in (dict(steps=0), dict(lr=0), dict(batch_size=-1), dict(stage=3), dict(p_audio=1.5)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    with pytest.raises(ConfigError):
        TrainConfig(stage=2).require_backbone()


def test_config_precedence(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# comment\nsteps = 7\nlr = 0.5\nwidth = 32\n")
    env = {"PLAY_LR": "0.25", "PLAY_WIDTH": "64"}
    c = load_config(f, env=env, overrides={"width": 96})
    assert (c.steps, c.lr, c.width) == (7, 0.25, 96)


def test_config_rejects_unknown_and_malformed():
    with pytest.raises(ConfigError):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError):
        parse_config_text("steps 5")
    with pytest.raises(ConfigError):
        parse_config_text("steps = five")
    with pytest.raises(ConfigError):
        parse_config_text("steps = 1\nsteps = 2")
    assert parse_config_text("prev_noise_sqrt = true")["prev_noise_sqrt"] is True


# --- trainer ------------------------------------------------------------------

def test_step0_loss_near_one():
    clips = data()
    tr = Trainer(cfg(batch_size=64), clips, NormStats.from_clips(clips))
    assert abs(tr.step() - 1.0) < 0.25


def test_same_seed_same_loss_curve():
    clips = data()
    curves = []
    for _ in range(2):
        tr = Trainer(cfg(), clips, NormStats.from_clips(clips))
        curves.append(tr.run(5))
    assert curves[0] == curves[1]


def test_windows_cover_all_starts():
    clips = data()
    tr = Trainer(cfg(), clips, NormStats.from_clips(clips))
    assert len(tr.data) == 2 * (20 - 8 + 1)
    m0, b = tr.data.batch([0, 5])
    assert not b.prev_mask[0].any() and b.prev_mask[1].all()


def test_stage1_checkpoint_is_deterministic(tmp_path):
    clips = data()
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        train_stage1(cfg(steps=4, out=str(tmp_path / name / "m.ckpt")), clips)
    assert file_sha256(tmp_path / "a" / "m.ckpt") == file_sha256(tmp_path / "b" / "m.ckpt")


def test_resume_is_bit_exact(tmp_path):
    clips = data()
    stats = NormStats.from_clips(clips)
    straight = Trainer(cfg(steps=12), clips, stats)
    straight.run(12)
    part = Trainer(cfg(steps=12), clips, stats)
    part.run(5)
    part.save(tmp_path / "mid.ckpt")
    resumed = Trainer.resume(tmp_path / "mid.ckpt", clips)
    resumed.run(7)
    assert resumed.losses == straight.losses[5:]
    resumed.save(tmp_path / "r.ckpt")
    straight.save(tmp_path / "s.ckpt")
    assert file_sha256(tmp_path / "r.ckpt") == file_sha256(tmp_path / "s.ckpt")


def test_divergence_aborts_with_step():
    clips = data()
    tr = Trainer(cfg(), clips, NormStats.from_clips(clips))
    tr.run(2)
    with torch.no_grad():
        tr.model.exp_head.fc2.bias.fill_(float("nan"))
    with pytest.raises(NumericalDivergenceError) as exc:
        tr.step()
    assert exc.value.step == 2


def test_corrupt_checkpoint_rejected(tmp_path):
    clips = data()
    train_stage1(cfg(steps=1, out=str(tmp_path / "a.ckpt")), clips)
    raw = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "b.ckpt").write_bytes(raw[:-10] + bytes(b ^ 0xFF for b in raw[-10:]))
    (tmp_path / "c.ckpt").write_bytes(raw[:100])
    (tmp_path / "d.ckpt").write_bytes(b"garbage" + raw)
    for name in "bcd":
        with pytest.raises(FormatError):
            load_model(tmp_path / f"{name}.ckpt")


def test_container_round_trip(tmp_path):
    tensors = {"x": torch.arange(6, dtype=torch.float64).reshape(2, 3), "i": np.arange(3), "u": np.ones(2, np.uint8)}
    write_container(tmp_path / "c", {"hello": 1}, tensors)
    meta, back = read_container(tmp_path / "c")
    assert meta["hello"] == 1
    assert np.array_equal(back["x"], tensors["x"].numpy()) and back["i"].dtype == np.int64


# --- stage 2 ------------------------------------------------------------------

@pytest.fixture(scope="module")
def backbone(tmp_path_factory):
    path = tmp_path_factory.mktemp("s1") / "s1.ckpt"
    train_stage1(cfg(steps=20, out=str(path)), data())
    return path


def test_stage2_keeps_backbone_bit_exact(backbone, tmp_path):
    clips = data(("neutral", "happy"), seed=3)
    before = load_model(backbone).partition_hash(1)
    tr = train_stage2(cfg(stage=2, steps=15, backbone=str(backbone), out=str(tmp_path / "s2.ckpt")), clips)
    assert tr.model.partition_hash(1) == before
    model = load_model(backbone, emotion=tmp_path / "s2.ckpt")
    assert model.stage2 and model.partition_hash(1) == before
    assert not torch.equal(model.emotion.table, load_model(backbone).emotion.table)


def test_stage2_refuses_other_backbone(backbone, tmp_path):
    clips = data(("neutral", "happy"), seed=3)
    train_stage2(cfg(stage=2, steps=2, backbone=str(backbone), out=str(tmp_path / "s2.ckpt")), clips)
    other = tmp_path / "other.ckpt"
    train_stage1(cfg(steps=3, seed=9, out=str(other)), data())
    with pytest.raises(BackboneMismatchError):
        load_stage2(tmp_path / "s2.ckpt", load_model(other))
    with pytest.raises(FormatError):
        load_model(tmp_path / "s2.ckpt")


def test_stage2_resume_bit_exact(backbone, tmp_path):
    clips = data(("neutral", "sad"), seed=4)
    c = cfg(stage=2, steps=8, backbone=str(backbone), out=str(tmp_path / "x.ckpt"))
    straight = train_stage2(c, clips)
    part = Trainer(dataclasses.replace(c, steps=8), clips, straight.stats, model=load_model(backbone))
    part.run(3)
    part.save(tmp_path / "mid.ckpt")
    resumed = Trainer.resume(tmp_path / "mid.ckpt", clips)
    resumed.run(5)
    assert resumed.losses == straight.losses[3:]


def test_stage2_without_offsets_matches_stage1_loss(backbone):
    clips = data(seed=5)
    s1 = load_model(backbone)
    stats = NormStats.from_json(read_container(backbone)[0]["stats"]).with_clips(clips)
    t1 = Trainer(cfg(), clips, stats, model=s1)
    ref = t1.evaluate(list(range(8)), seed=1)
    neutral = [dataclasses.replace(c, emotion="neutral") for c in clips]
    t2 = Trainer(cfg(stage=2, backbone=str(backbone)), neutral, stats, model=load_model(backbone))
    assert t2.evaluate(list(range(8)), seed=1) == ref        # fresh branch is an identity
    t2.run(10)
    assert abs(t2.evaluate(list(range(8)), seed=1) - ref) < 0.05 * ref
