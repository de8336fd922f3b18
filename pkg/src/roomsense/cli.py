"""Command-line surface: gen-data, train, eval, infer.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every run writes a reproducibility record (resolved config, seed,
checkpoint hash) beside its outputs.
"""

from __future__ import annotations

import argparse
import difflib
import os
import sys
import time

import numpy as np

from .autodiff.checkpoint import checkpoint_sha256, load_checkpoint, save_checkpoint
from .errors import (ConfigError, DataError, GradientError, NumericError,
                     RoomsenseError, ShapeError)
from .nets import MultiTaskModel, infer_frame, infer_pose
from .synth import SynthConfig, generate_pose_dataset, generate_scene_dataset
from .synth.scenes import CLASS_ALBEDO, NUM_CLASSES
from .synth.io import PoseDataset, SceneDataset, pack_blob
from .training import (TrainConfig, apply_overrides, config_for_single_task,
                       evaluate_model, load_train_config, parse_config_text,
                       section_kwargs, train)
from .training.trainer import held_out_split


class _Parser(argparse.ArgumentParser):
    """argparse with a did-you-mean hint for unknown flags."""

    def error(self, message):
        if "unrecognized arguments:" in message:
            bad = message.split("unrecognized arguments:", 1)[1].split()
            # unrecognized args surface at the top parser, so collect the
            # flags of every subcommand too
            known = []
            stack = [self]
            while stack:
                parser = stack.pop()
                for a in parser._actions:
                    known.extend(a.option_strings)
                    if isinstance(a, argparse._SubParsersAction):
                        stack.extend(a.choices.values())
            for b in bad:
                if b.startswith("-"):
                    close = difflib.get_close_matches(b, known, n=1)
                    if close:
                        message += f" (did you mean {close[0]}?)"
                        break
        super().error(message)


def build_parser():
    top = _Parser(prog="roomsense",
                  description="Multi-task indoor scene understanding on "
                              "RGB + sparse lidar: depth completion, "
                              "segmentation, 3D detection, human pose.")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render synthetic scene + pose datasets")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenes", type=int, default=200)
    g.add_argument("--pose-samples", type=int, default=400)
    g.add_argument("--config", help="config file with a [synth] section")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. synth.width=96")

    t = sub.add_parser("train", help="train the multi-task model")
    t.add_argument("--config", help="config file with a [trainer] section")
    t.add_argument("--scenes", required=True, help="scene dataset directory")
    t.add_argument("--pose", help="pose dataset directory")
    t.add_argument("--out", required=True, help="run output directory")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--single-task", choices=("depth", "seg", "det", "pose"),
                   help="train with exactly this task enabled")

    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenes", required=True)
    e.add_argument("--pose", help="pose dataset directory")
    e.add_argument("--report", required=True, help="name=value report file")
    e.add_argument("--config", help="config file (trainer flags for the model)")
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    i = sub.add_parser("infer", help="run one frame through the requested heads")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--scenes", help="scene dataset directory")
    i.add_argument("--scene", type=int, default=0, help="scene index")
    i.add_argument("--frame", type=int, default=0, help="frame index in the scene")
    i.add_argument("--pose-data", help="pose dataset directory (for --tasks pose)")
    i.add_argument("--sample", type=int, default=0, help="pose sample index")
    i.add_argument("--tasks", default="depth,seg,det,pose",
                   help="comma list from depth,seg,det,pose")
    i.add_argument("--out", required=True)
    i.add_argument("--config", help="config file (trainer flags for the model)")
    i.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return top


# ---------------------------------------------------------------------------
# artifact writers

def _write_pgm(path, values):
    """8-bit normalized grayscale preview."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    img = np.round((v - lo) / max(hi - lo, 1e-12) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def _write_ppm(path, rgb_u8):
    img = np.asarray(rgb_u8, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


_PALETTE = np.round(np.array([CLASS_ALBEDO[c] for c in range(NUM_CLASSES)]) * 255
                    ).astype(np.uint8)


def _write_record(out_dir, command, seed, flat_config, checkpoint_path=None):
    lines = [f"command = {command}", f"seed = {seed}"]
    if checkpoint_path:
        lines.append(f"checkpoint_sha256 = {checkpoint_sha256(checkpoint_path)}")
    for key in sorted(flat_config):
        lines.append(f"{key} = {flat_config[key]}")
    with open(os.path.join(out_dir, "run_record.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _resolved_flat(cfg):
    return {f"trainer.{k}": getattr(cfg, k) for k in cfg.__dataclass_fields__}


# ---------------------------------------------------------------------------
# model loading

def _load_model(checkpoint_path, config_path, overrides):
    arrays = load_checkpoint(checkpoint_path)
    fusion_key = "vote_head.vote_fc1.w"
    if fusion_key not in arrays:
        raise DataError(f"checkpoint lacks {fusion_key}; not a model checkpoint")
    fusion = arrays[fusion_key].shape[0] > 64
    cfg, _ = load_train_config(config_path, overrides)
    if config_path is None and not overrides:
        cfg = TrainConfig(use_semantics=fusion)
    if cfg.use_semantics != fusion:
        raise DataError("checkpoint was trained with semantic fusion "
                        f"{'on' if fusion else 'off'} but config says "
                        f"{'on' if cfg.use_semantics else 'off'}")
    model = MultiTaskModel(np.random.default_rng(0),
                           use_semantics=cfg.use_semantics, use_color=cfg.use_color)
    model.load_arrays(arrays)
    return model, cfg


# ---------------------------------------------------------------------------
# commands

def _cmd_gen_data(args):
    flat = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            flat = parse_config_text(fh.read())
    flat = apply_overrides(flat, args.set)
    synth_cfg = SynthConfig(**section_kwargs(flat, "synth", SynthConfig))
    os.makedirs(args.out, exist_ok=True)
    scenes_dir = os.path.join(args.out, "scenes")
    pose_dir = os.path.join(args.out, "pose")
    generate_scene_dataset(scenes_dir, seed=args.seed, n_scenes=args.scenes,
                           config=synth_cfg)
    generate_pose_dataset(pose_dir, seed=args.seed, n_samples=args.pose_samples,
                          config=synth_cfg)
    record = dict(flat)
    record.update({"gen.scenes": args.scenes, "gen.pose_samples": args.pose_samples})
    _write_record(args.out, "gen-data", args.seed, record)
    print(f"wrote {args.scenes} scenes to {scenes_dir}")
    print(f"wrote {args.pose_samples} pose samples to {pose_dir}")
    return 0


def _cmd_train(args):
    if args.config is None and not args.set:
        raise ConfigError("train needs --config (or --set overrides)")
    cfg, flat = load_train_config(args.config, args.set)
    if args.single_task:
        cfg = config_for_single_task(cfg, args.single_task)
    if cfg.task_pose and not args.pose:
        raise ConfigError("pose task enabled: --pose dataset required")
    result = train(cfg, args.scenes, args.pose, args.out, log=print)
    _write_record(args.out, "train", cfg.seed, _resolved_flat(cfg),
                  checkpoint_path=result.checkpoint_best)
    for name, value in sorted(result.eval_metrics.items()):
        print(f"{name}={value:.6f}")
    print(f"best checkpoint: {result.checkpoint_best}")
    return 0


def _cmd_eval(args):
    model, cfg = _load_model(args.checkpoint, args.config, args.set)
    scene_ds = SceneDataset(args.scenes)
    scenes = [scene_ds.load_scene(i) for i in range(len(scene_ds))]
    _, eval_idx = held_out_split(len(scenes), cfg.eval_fraction)
    pose_eval = []
    if args.pose:
        pose_ds = PoseDataset(args.pose)
        samples = [pose_ds.load_sample(i) for i in range(len(pose_ds))]
        _, pe = held_out_split(len(samples), cfg.eval_fraction)
        pose_eval = [samples[i] for i in pe]
    metrics = evaluate_model(model, [scenes[i] for i in eval_idx], pose_eval, cfg)
    report_dir = os.path.dirname(os.path.abspath(args.report))
    os.makedirs(report_dir, exist_ok=True)
    with open(args.report, "w", encoding="utf-8") as fh:
        for name, value in sorted(metrics.items()):
            fh.write(f"{name}={value:.6f}\n")
            print(f"{name}={value:.6f}")
    _write_record(report_dir, "eval", cfg.seed, _resolved_flat(cfg),
                  checkpoint_path=args.checkpoint)
    return 0


def _cmd_infer(args):
    tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    unknown = [t for t in tasks if t not in ("depth", "seg", "det", "pose")]
    if unknown:
        raise ConfigError(f"unknown tasks {unknown}; pick from depth,seg,det,pose")
    model, cfg = _load_model(args.checkpoint, args.config, args.set)
    os.makedirs(args.out, exist_ok=True)
    timings = []

    frame_tasks = tuple(t for t in tasks if t in ("depth", "seg", "det"))
    if frame_tasks:
        if not args.scenes:
            raise ConfigError("--scenes required for depth/seg/det inference")
        frames = SceneDataset(args.scenes).load_scene(args.scene)
        if not 0 <= args.frame < len(frames):
            raise DataError(f"frame {args.frame} out of range (scene has {len(frames)})")
        fr = frames[args.frame]
        for task in frame_tasks:
            t0 = time.perf_counter()
            out = infer_frame(model, fr.rgb, fr.sparse_depth, fr.intrinsics,
                              tasks=(task,))
            dt = (time.perf_counter() - t0) * 1e3
            timings.append((task, dt))
            if task == "depth":
                with open(os.path.join(args.out, "depth.blob"), "wb") as fh:
                    fh.write(pack_blob({"depth": out["depth"]}))
                _write_pgm(os.path.join(args.out, "depth_preview.pgm"), out["depth"])
            elif task == "seg":
                with open(os.path.join(args.out, "seg_labels.blob"), "wb") as fh:
                    fh.write(pack_blob({"labels": out["seg_labels"]}))
                _write_ppm(os.path.join(args.out, "seg_preview.ppm"),
                           _PALETTE[out["seg_labels"]])
            else:
                with open(os.path.join(args.out, "detections.txt"), "w",
                          encoding="utf-8") as fh:
                    for b in out["detections"]:
                        c, s = b.center, b.size
                        fh.write(f"{b.class_id} {b.score:.6f} "
                                 f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} "
                                 f"{s[0]:.6f} {s[1]:.6f} {s[2]:.6f}\n")

    if "pose" in tasks:
        if args.pose_data:
            rgb = PoseDataset(args.pose_data).load_sample(args.sample).rgb
        elif args.scenes:
            rgb = SceneDataset(args.scenes).load_scene(args.scene)[args.frame].rgb
        else:
            raise ConfigError("--pose-data or --scenes required for pose inference")
        t0 = time.perf_counter()
        persons = infer_pose(model, rgb)
        dt = (time.perf_counter() - t0) * 1e3
        timings.append(("pose", dt))
        with open(os.path.join(args.out, "pose.txt"), "w", encoding="utf-8") as fh:
            for p in persons:
                kps = " ".join(f"{v:.4f}" for v in p["keypoints"].reshape(-1))
                fh.write(f"{p['score']:.6f} {p['center'][0]:.4f} "
                         f"{p['center'][1]:.4f} {kps}\n")

    total = sum(dt for _, dt in timings)
    for task, dt in timings:
        print(f"task={task} time_ms={dt:.1f}")
    print(f"total time_ms={total:.1f}")
    if timings:
        slowest = max(timings, key=lambda kv: kv[1])[0]
        print(f"slowest_task={slowest}")
    _write_record(args.out, "infer", cfg.seed, _resolved_flat(cfg),
                  checkpoint_path=args.checkpoint)
    return 0


_COMMANDS = {"gen-data": _cmd_gen_data, "train": _cmd_train,
             "eval": _cmd_eval, "infer": _cmd_infer}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, GradientError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except (DataError, ShapeError, RoomsenseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
