import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motionlatent.cli import cli_main
from motionlatent.clips import MotionClip, load_clip, load_dataset, save_clip
from motionlatent.disentangle import frozen_expression, spinning_pose
from motionlatent.errors import DimensionError, InvalidArgumentError
from motionlatent.features import save_feature_matrix
from motionlatent.metrics import (METRIC_KEYS, SEPARATION_CAP, EvalReport, boundary_ratio, evaluate_clips,
                                  metric_akd, metric_apd, metric_emotion_separation, metric_jitter, metric_traj_mse)
from motionlatent.plotting import CLIP_COLUMNS, emit_plots


def random_clip(n=12, K=3, seed=0, emotion=None, clip_id="c"):
    rng = np.random.default_rng(seed)
    pose = np.column_stack([rng.uniform(-0.5, 0.5, (n, 3)), rng.standard_normal((n, 3)), rng.uniform(0.5, 2, n)])
    return MotionClip(clip_id, rng.standard_normal((K, 3)), rng.standard_normal((n, K, 3)) * 0.1, pose,
                      rng.standard_normal((n, 4)), emotion=emotion)


# --- brute-force oracles ------------------------------------------------------

def apd_loop(g, r):
    out = []
    for c in range(3):
        total = 0.0
        for i in range(len(g)):
            total += abs(g[i][c] - r[i][c]) * 180.0 / math.pi
        out.append(total / len(g))
    return out


def akd_loop(g, r):
    total, count = 0.0, 0
    for i in range(len(g)):
        for k in range(len(g[i])):
            total += math.sqrt(sum((g[i][k][d] - r[i][k][d]) ** 2 for d in range(3)))
            count += 1
    return total / count


def jitter_loop(p):
    vals = []
    for i in range(1, len(p) - 1):
        sq = 0.0
        for c in range(3):
            d2 = (p[i + 1][c] - 2 * p[i][c] + p[i - 1][c]) * 180.0 / math.pi
            sq += d2 * d2
        vals.append(math.sqrt(sq))
    return sum(vals) / len(vals)


def separation_loop(groups):
    means, within = [], []
    for items in groups.values():
        vecs = [[sum(x[t][j] for t in range(len(x))) / len(x) for j in range(len(x[0]))] for x in items]
        mu = [sum(v[j] for v in vecs) / len(vecs) for j in range(len(vecs[0]))]
        means.append(mu)
        within += [sum((v[j] - mu[j]) ** 2 for j in range(len(mu))) for v in vecs]
    grand = [sum(m[j] for m in means) / len(means) for j in range(len(means[0]))]
    between = sum(sum((m[j] - grand[j]) ** 2 for j in range(len(grand))) for m in means) / len(means)
    return between / (sum(within) / len(within))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 15))
def test_metrics_match_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    g, r = rng.standard_normal((n, 7)), rng.standard_normal((n, 7))
    apd = metric_apd(g, r)
    for key, want in zip(("apd_yaw_deg", "apd_pitch_deg", "apd_roll_deg"), apd_loop(g.tolist(), r.tolist())):
        assert abs(apd[key] - want) <= 1e-12 * max(1.0, abs(want))
    gk, rk = rng.standard_normal((n, 4, 3)), rng.standard_normal((n, 4, 3))
    assert abs(metric_akd(gk, rk) - akd_loop(gk.tolist(), rk.tolist())) < 1e-12
    want = jitter_loop(g.tolist())
    assert abs(metric_jitter(g) - want) <= 1e-12 * max(1.0, want)
    assert abs(metric_traj_mse(gk, rk) - float(np.mean([(a - b) ** 2 for a, b in zip(gk.ravel(), rk.ravel())]))) < 1e-12
    groups = {l: [rng.standard_normal((5, 2)) + i for _ in range(3)] for i, l in enumerate("abc")}
    want = separation_loop({k: [x.tolist() for x in v] for k, v in groups.items()})
    assert abs(metric_emotion_separation(groups) - want) <= 1e-12 * max(1.0, want)


def test_apd_constant_yaw_offset():
    ref = np.zeros((10, 7))
    gen = ref.copy()
    gen[:, 0] = np.deg2rad(2.0)
    apd = metric_apd(gen, ref)
    assert abs(apd["apd_yaw_deg"] - 2.0) < 1e-12 and apd["apd_pitch_deg"] == apd["apd_roll_deg"] == 0.0
    assert set(metric_apd(ref, ref).values()) == {0.0}
    with pytest.raises(DimensionError):
        metric_apd(ref, ref[:-1])


def test_akd_translation():
    kp = np.random.default_rng(0).standard_normal((6, 5, 3))
    assert metric_akd(kp, kp) == 0.0
    assert abs(metric_akd(kp + [1.0, 0.0, 0.0], kp) - 1.0) < 1e-12


def test_jitter_examples():
    n, a = 9, 1.5
    assert metric_jitter(np.zeros((n, 7))) == 0.0
    ramp = np.zeros((n, 7))
    ramp[:, :3] = np.arange(n)[:, None] * 0.01
    assert metric_jitter(ramp) < 1e-12
    alt = np.zeros((n, 7))
    alt[:, 0] = np.deg2rad(a) * (-1.0) ** np.arange(n)
    assert abs(metric_jitter(alt) - 4 * a) < 1e-12
    with pytest.raises(InvalidArgumentError):
        metric_jitter(np.zeros((2, 7)))


def test_separation_examples():
    same = {l: [np.ones((4, 2)), np.ones((4, 2))] for l in ("a", "b")}
    assert metric_emotion_separation(same) == 0.0
    disjoint = {"a": [np.zeros((4, 2))] * 2, "b": [np.ones((4, 2))] * 2}
    assert metric_emotion_separation(disjoint) == SEPARATION_CAP
    with pytest.raises(InvalidArgumentError):
        metric_emotion_separation({"a": [np.zeros(2)] * 2})
    with pytest.raises(InvalidArgumentError):
        metric_emotion_separation({"a": [np.zeros(2)], "b": [np.zeros(2)] * 2})


def test_boundary_ratio_smooth_ramp_is_one():
    pose = np.zeros((40, 7))
    pose[:, 0] = np.arange(40) * 0.01
    assert abs(boundary_ratio(pose, 10) - 1.0) < 1e-12
    pose[20:, 0] += 0.1                          # a jump exactly at a window boundary
    assert boundary_ratio(pose, 10) > 3


def test_report_json_stable_and_round_trips():
    clips = [random_clip(seed=s) for s in range(2)]
    rep = evaluate_clips(clips, clips, seed=3)
    doc = json.loads(rep.to_json())
    assert list(doc["metrics"]) == sorted(METRIC_KEYS)
    assert doc["metrics"]["emotion_separation"] is None
    assert EvalReport.from_json(rep.to_json()).to_json() == rep.to_json()
    with pytest.raises(InvalidArgumentError):
        EvalReport({"akd": float("nan")})


# --- plots --------------------------------------------------------------------

def test_clip_csv_rows_and_bytes(tmp_path):
    clip = random_clip(n=17)
    csv_a, svg_a = emit_plots(clip, tmp_path / "a")
    csv_b, svg_b = emit_plots(clip, tmp_path / "b")
    lines = csv_a.read_text().splitlines()
    assert len(lines) == 17 + 1 and lines[0] == ",".join(CLIP_COLUMNS)
    assert csv_a.read_bytes() == csv_b.read_bytes() and svg_a.read_bytes() == svg_b.read_bytes()
    assert svg_a.read_text().startswith("<svg")


def test_frozen_expression_plots_flat(tmp_path):
    demo = frozen_expression(random_clip(n=20))
    csv_path, _ = emit_plots(demo, tmp_path / "frozen")
    rows = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    assert np.ptp(rows[:, CLIP_COLUMNS.index("expr_norm")]) == 0.0
    assert np.ptp(rows[:, CLIP_COLUMNS.index("yaw_deg")]) > 0
    src = random_clip(n=50)
    rows = np.loadtxt(emit_plots(spinning_pose(src), tmp_path / "spin")[0], delimiter=",", skiprows=1)
    sweep = np.rad2deg(src.pose[0, 0]) + 30.0 * np.sin(2 * np.pi * np.arange(50) / 50)
    np.testing.assert_allclose(rows[:, CLIP_COLUMNS.index("yaw_deg")], sweep, rtol=0, atol=1e-6)


def test_report_plot(tmp_path):
    clips = [random_clip(seed=s) for s in range(2)]
    csv_path, svg_path = emit_plots(evaluate_clips(clips, clips), tmp_path / "r.csv")
    assert csv_path.name == "r.csv" and svg_path.name == "r.svg"
    assert len(csv_path.read_text().splitlines()) == len(METRIC_KEYS) + 1


# --- command line -----------------------------------------------------------

def test_unknown_flag_is_config_error(capsys):
    assert cli_main(["generate", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert cli_main([]) == 2


def test_missing_file_is_data_error(tmp_path):
    assert cli_main(["stats", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "s.json")]) == 3


def test_eval_identical_is_zero(tmp_path, capsys):
    for s in range(2):
        save_clip(random_clip(seed=s, clip_id=f"c{s}"), tmp_path / f"c{s}.clip")
    assert cli_main(["eval", "--generated", str(tmp_path), "--reference", str(tmp_path), "--seed", "1"]) == 0
    m = json.loads(capsys.readouterr().out)["metrics"]
    for key in ("apd_yaw_deg", "apd_pitch_deg", "apd_roll_deg", "akd", "traj_mse"):
        assert m[key] == 0.0


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli_main(["synth-data", "--out", str(data), "--num-clips", "2", "--frames", "24", "--keypoints", "3",
                     "--feature-dim", "8"]) == 0
    ckpt = root / "m.ckpt"
    args = ["train-stage1", "--dataset", str(data), "--out", str(ckpt), "--steps", "3", "--width", "16",
            "--blocks", "1", "--heads", "2", "--kernel", "3", "--window", "8", "--prev", "2", "--batch-size", "4",
            "--diffusion-steps", "10", "--prev-noise-max-t", "5"]
    assert cli_main(args) == 0
    return root, data, ckpt, args


def test_cli_training_is_reproducible_and_resumable(trained, tmp_path):
    root, data, ckpt, args = trained
    again = tmp_path / "again"
    again.mkdir()
    out = again / "m.ckpt"
    assert cli_main([a if a != str(ckpt) else str(out) for a in args]) == 0
    assert out.read_bytes() == ckpt.read_bytes()
    assert cli_main(["train-stage1", "--dataset", str(data), "--resume", str(out), "--steps", "5",
                     "--out", str(tmp_path / "r.ckpt")]) == 0
    assert (tmp_path / "r.ckpt").exists()


def test_generate_matches_audio_length(trained, tmp_path):
    root, data, ckpt, _ = trained
    feats = tmp_path / "a.feat"
    save_feature_matrix(np.random.default_rng(0).standard_normal((19, 8)), feats)
    identity = sorted(data.iterdir())[0]
    argv = ["generate", "--checkpoint", str(ckpt), "--audio", str(feats), "--identity", str(identity),
            "--seed", "4", "--out", str(tmp_path / "g.clip"), "--csv", str(tmp_path / "g"),
            "--demo", str(tmp_path / "demo")]
    assert cli_main(argv) == 0
    clip = load_clip(tmp_path / "g.clip")
    assert len(clip) == 19
    assert len((tmp_path / "g.csv").read_text().splitlines()) == 20
    assert len(load_dataset(tmp_path / "demo")) == 2
    (tmp_path / "again").mkdir()
    argv[argv.index("--out") + 1] = str(tmp_path / "again" / "g.clip")
    assert cli_main(argv) == 0
    assert (tmp_path / "g.clip").read_bytes() == (tmp_path / "again" / "g.clip").read_bytes()


def test_generate_rejects_wrong_feature_dim_and_emotion_without_branch(trained, tmp_path):
    root, data, ckpt, _ = trained
    feats = tmp_path / "a.feat"
    save_feature_matrix(np.zeros((5, 3)), feats)
    identity = str(sorted(data.iterdir())[0])
    base = ["generate", "--checkpoint", str(ckpt), "--audio", str(feats), "--identity", identity,
            "--out", str(tmp_path / "g.clip")]
    assert cli_main(base) == 3
    assert cli_main(base + ["--emotion", "happy"]) == 2


def test_plot_subcommand(tmp_path, capsys):
    save_clip(random_clip(n=7), tmp_path / "c.clip")
    assert cli_main(["plot", str(tmp_path / "c.clip"), "--out", str(tmp_path / "p")]) == 0
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 8
