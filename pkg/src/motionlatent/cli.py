"""Command-line interface.

Exit codes: 0 success, 2 configuration/usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from . import __version__
from .checkpoint import file_sha256
from .clips import EMOTIONS, MotionClip, load_clip, load_dataset, save_clip, save_dataset
from .diffusion import generate_sequence
from .disentangle import frozen_expression, spinning_pose
from .errors import ConfigError, DataError, NumericalError
from .features import load_audio_features
from .metrics import EvalReport, evaluate_clips
from .normalization import NormStats
from .plotting import emit_plots
from .synthetic import SynthConfig, generate_synthetic_dataset, generating_map, planted_emotion_offsets
from .training import (TrainConfig, Trainer, checkpoint_meta, checkpoint_stats, coerce_value, load_config,
                       load_model, train_stage1, train_stage2)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("motionlatent")


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit code 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: error: {message}")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat 'key = value' config file")
    for f in dataclasses.fields(TrainConfig):
        if f.name == "stage":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        else:
            p.add_argument(flag, dest=f.name, default=None, help=f"(default {f.default!r})")
    p.add_argument("--resume", help="continue from this checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionlatent", description="Audio-driven motion-latent diffusion toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write a synthetic clip dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-clips", type=int, default=8)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--keypoints", type=int, default=21)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--map-seed", type=int, default=1234)
    p.add_argument("--emotions", help="comma-separated labels cycled over clips, e.g. neutral,happy,sad")
    p.add_argument("--emotion-scale", type=float, default=2.0)
    p.add_argument("--emotion-seed", type=int, default=0)
    p.add_argument("--prefix", default="clip")

    p = sub.add_parser("stats", help="compute normalization statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=1e-6)

    _add_train_flags(sub.add_parser("train-stage1", help="train the audio-driven backbone"))
    _add_train_flags(sub.add_parser("train-stage2", help="train the emotion branch on a frozen backbone"))

    p = sub.add_parser("generate", help="generate motion from audio")
    p.add_argument("--checkpoint", required=True, help="stage-1 checkpoint")
    p.add_argument("--emotion-checkpoint", help="stage-2 checkpoint (needed for --emotion)")
    p.add_argument("--audio", required=True, help="WAV file or feature matrix")
    p.add_argument("--identity", required=True,
                   help="clip file; its canonical keypoints and first-frame pose define the identity")
    p.add_argument("--emotion", choices=EMOTIONS)
    p.add_argument("--wa", type=float, default=1.5, help="audio guidance weight")
    p.add_argument("--we", type=float, default=1.5, help="emotion guidance weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output clip file")
    p.add_argument("--csv", help="also write a per-frame CSV/SVG with this base path")
    p.add_argument("--demo", help="directory for the frozen-expression and spinning-pose variants")

    p = sub.add_parser("eval", help="compare generated clips with references")
    p.add_argument("--generated", required=True, nargs="+", help="clip files or directories")
    p.add_argument("--reference", required=True, nargs="+", help="clip files or directories")
    p.add_argument("--checkpoint", help="checkpoint whose hash is recorded in the report")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the JSON report here (default stdout)")

    p = sub.add_parser("plot", help="CSV + SVG for a clip file or a JSON report")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="base path; .csv and .svg are appended")
    return parser


# --- commands ----------------------------------------------------------------

def cmd_synth_data(args) -> int:
    labels = tuple(s.strip() for s in args.emotions.split(",")) if args.emotions else None
    base = SynthConfig(num_clips=args.num_clips, frames_per_clip=args.frames, num_keypoints=args.keypoints,
                       feature_dim=args.feature_dim, seed=args.seed, map_seed=args.map_seed,
                       clip_prefix=args.prefix)
    offsets = None
    if labels:
        offsets = planted_emotion_offsets(generating_map(base), labels, args.emotion_scale, args.emotion_seed)
    config = dataclasses.replace(base, emotions=labels, emotion_offsets=offsets)
    paths = save_dataset(generate_synthetic_dataset(config), args.out)
    print(f"wrote {len(paths)} clips to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    stats = NormStats.from_clips(load_dataset(args.dataset), epsilon=args.epsilon)
    stats.save(args.out)
    print(f"wrote statistics for {len(stats.pose_mean)} clips to {args.out}")
    return EXIT_OK


def _train_config(args, stage: int) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
                 if f.name != "stage" and getattr(args, f.name, None) is not None}
    overrides["stage"] = stage
    config = load_config(args.config, overrides=overrides)
    if not config.dataset:
        raise ConfigError("no dataset given (--dataset or 'dataset' in the config)")
    return config


_RESUMABLE = ("steps", "out", "checkpoint_every", "log_every")


def config_value(key, text):
    return coerce_value(key, text) if isinstance(text, str) else text


def _progress(step, loss):
    log.debug("step %d loss %.6f", step, loss)


def cmd_train(args, stage: int) -> int:
    config = _train_config(args, stage)
    clips = load_dataset(config.dataset)
    if args.resume:
        trainer = Trainer.resume(args.resume, clips, backbone=config.backbone or None)
        # only run-length and output flags may change; the training recipe comes from the checkpoint
        given = {k: getattr(trainer.config, k) if getattr(args, k) is None else config_value(k, getattr(args, k))
                 for k in _RESUMABLE}
        trainer.config = dataclasses.replace(trainer.config, **given)
        config = trainer.config
        trainer.run(callback=_progress, checkpoint_path=config.out)
        trainer.save(config.out)
    elif stage == 1:
        stats = NormStats.load(config.stats).with_clips(clips) if config.stats else None
        trainer = train_stage1(config, clips, stats, callback=_progress)
    else:
        trainer = train_stage2(config, clips, callback=_progress)
    print(json.dumps({"stage": stage, "steps": trainer.step_count,
                      "first_loss": trainer.losses[0] if trainer.losses else None,
                      "final_loss": trainer.losses[-1] if trainer.losses else None,
                      "checkpoint": config.out}, sort_keys=True))
    return EXIT_OK


def _identity_stats(stats: NormStats, identity: MotionClip) -> tuple[NormStats, str]:
    if identity.clip_id in stats.pose_mean:
        return stats, identity.clip_id
    key = "reference:" + identity.clip_id
    return stats.with_reference(key, identity.pose[0]), key


def cmd_generate(args) -> int:
    if args.emotion and not args.emotion_checkpoint:
        raise ConfigError("--emotion needs --emotion-checkpoint")
    model = load_model(args.checkpoint, emotion=args.emotion_checkpoint)
    meta = checkpoint_meta(args.checkpoint)
    schedule = TrainConfig(**meta["config"]).schedule()
    identity = load_clip(args.identity)
    stats, key = _identity_stats(checkpoint_stats(args.checkpoint), identity)
    audio = load_audio_features(args.audio)
    if audio.feature_dim != model.arch.feature_dim:
        raise DataError(f"audio has {audio.feature_dim} features, model expects {model.arch.feature_dim}")
    gen = torch.Generator().manual_seed(args.seed)
    (clip,) = generate_sequence(model, schedule, stats, audio, identity.canonical_kp, key, [gen],
                                emotion=args.emotion, w_a=args.wa, w_e=args.we,
                                clip_id=Path(args.out).stem)
    save_clip(clip, args.out)
    if args.csv:
        emit_plots(clip, args.csv)
    if args.demo:
        out = Path(args.demo)
        out.mkdir(parents=True, exist_ok=True)
        for variant in (frozen_expression(clip), spinning_pose(clip)):
            save_clip(variant, out / f"{variant.clip_id}.clip")
            emit_plots(variant, out / variant.clip_id)
    print(f"wrote {len(clip)} frames to {args.out}")
    return EXIT_OK


def _collect(paths) -> list[MotionClip]:
    clips = []
    for p in paths:
        clips.extend(load_dataset(p) if Path(p).is_dir() else [load_clip(p)])
    return clips


def cmd_eval(args) -> int:
    report = evaluate_clips(_collect(args.generated), _collect(args.reference), seed=args.seed,
                            checkpoint_hash=file_sha256(args.checkpoint) if args.checkpoint else None)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.input)
    if src.suffix == ".json":
        item = EvalReport.from_json(src.read_text())
    else:
        item = load_clip(src)
    for path in emit_plots(item, args.out):
        print(path)
    return EXIT_OK


COMMANDS = {
    "synth-data": cmd_synth_data,
    "stats": cmd_stats,
    "train-stage1": lambda a: cmd_train(a, 1),
    "train-stage2": lambda a: cmd_train(a, 2),
    "generate": cmd_generate,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except SystemExit as exc:           # --help / --version
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main():
    sys.exit(cli_main())
