"""Multi-task training: combined loss, dual-dataset steps, checkpoints.

Every step consumes one scene batch and one pose batch; all enabled
task losses are combined as

    total = (lambda_depth * l_depth + lambda_seg * l_seg)
          + (lambda_det * l_det + lambda_pose * l_pose)

in exactly that association (the identity test reproduces it
bit-for-bit), followed by a single backward pass and one update with
two Adam groups: the depth-completion head (decoder + egomotion) at
``lr_depth_head``, everything else at ``lr_main``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from ..autodiff import Adam, Tensor, backward, no_grad, ops, reset_tape
from ..autodiff.checkpoint import save_checkpoint
from ..errors import DataError, NumericError
from ..metrics import depth_metrics, keypoint_ap, map_3d
from ..nets import (MultiTaskModel, decode_detections, encode_pose_targets,
                    infer_frame, infer_pose, loss_depth_completion, loss_detection,
                    loss_distill, loss_pose, seg_accuracy, softmax_np,
                    warp_from_prediction)
from ..synth.io import PoseDataset, SceneDataset
from .config import TrainConfig


@dataclass
class MultiTaskLoss:
    l_depth: float
    l_seg: float
    l_det: float
    l_pose: float
    weights: tuple
    total: float


def _scalar_zero():
    return Tensor(np.zeros((), dtype=np.float32))


def _check_finite(value, task):
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss in task '{task}'", task=task)


def _mean_terms(terms):
    if not terms:
        return _scalar_zero()
    acc = terms[0]
    for t in terms[1:]:
        acc = ops.add(acc, t)
    return ops.mul(acc, 1.0 / len(terms))


def train_step(model, scene_frames, pose_samples, cfg):
    """Losses for one primary batch (list of scenes' frame lists) and
    one pose batch. Returns (total Tensor, MultiTaskLoss)."""
    frames = [f for scene in scene_frames for f in scene]
    if not frames:
        raise DataError("train_step: empty scene batch")
    need_depth = cfg.task_depth or cfg.task_det
    fusion = cfg.task_det and model.vote_head.use_semantics
    need_seg = cfg.task_seg or fusion

    rgb = np.stack([f.rgb for f in frames])
    rgb_pyr, neck_pyr = model.rgb_features(rgb)
    h, w = frames[0].rgb.shape[1:]

    depth = None
    sp_pyr = None
    if need_depth:
        sp_pyr = model.sparse_features([f.sparse_depth for f in frames])
        depth = model.predict_depth(rgb_pyr, sp_pyr)

    seg_logits = None
    if need_seg:
        seg_logits = model.predict_seg_logits(neck_pyr)

    l_depth_t = _scalar_zero()
    if cfg.task_depth:
        pairs = []      # (frame index, neighbor index) within the flat batch
        base = 0
        for scene in scene_frames:
            n = len(scene)
            for j in range(n):
                if j > 0:
                    pairs.append((base + j, base + j - 1))
                if j < n - 1:
                    pairs.append((base + j, base + j + 1))
            base += n
        warps = {i: [] for i in range(len(frames))}
        if pairs:
            idx_t = np.array([p[0] for p in pairs])
            idx_n = np.array([p[1] for p in pairs])
            aa, tr = model.egomotion.from_p4(
                ops.gather(rgb_pyr[2], idx_t), ops.gather(sp_pyr[2], idx_t),
                ops.gather(rgb_pyr[2], idx_n), ops.gather(sp_pyr[2], idx_n))
            for row, (i, j) in enumerate(pairs):
                depth_i = ops.reshape(ops.slice_axis(depth, 0, i, i + 1), (h, w))
                warped, mask = warp_from_prediction(
                    Tensor(frames[j].rgb),
                    depth_i,
                    ops.slice_axis(aa, 0, row, row + 1),
                    ops.slice_axis(tr, 0, row, row + 1),
                    frames[i].intrinsics)
                warps[i].append((warped, mask))
        terms = []
        for i, f in enumerate(frames):
            depth_i = ops.reshape(ops.slice_axis(depth, 0, i, i + 1), (h, w))
            term, _ = loss_depth_completion(depth_i, f.sparse_depth, warps[i], f.rgb)
            terms.append(term)
        l_depth_t = _mean_terms(terms)
        _check_finite(float(l_depth_t.data), "depth")

    l_seg_t = _scalar_zero()
    if cfg.task_seg:
        teacher = []
        for f in frames:
            if f.teacher_seg is None:
                raise DataError("train_step: frame has no teacher labels; "
                                "train from a generated dataset")
            teacher.append(f.teacher_seg)
        l_seg_t = loss_distill(seg_logits, np.stack(teacher))
        _check_finite(float(l_seg_t.data), "seg")

    l_det_t = _scalar_zero()
    if cfg.task_det:
        depth_np = depth.data
        seg_probs = softmax_np(seg_logits.data, axis=1) if fusion else None
        terms = []
        for i, f in enumerate(frames):
            internals = model.detect(depth_np[i], f.rgb,
                                     seg_probs[i] if fusion else None,
                                     f.intrinsics)
            term, _ = loss_detection(internals, f.gt_boxes)
            terms.append(term)
        l_det_t = _mean_terms(terms)
        _check_finite(float(l_det_t.data), "det")

    l_pose_t = _scalar_zero()
    if cfg.task_pose:
        if not pose_samples:
            raise DataError("train_step: pose task enabled but pose batch empty")
        pose_rgb = np.stack([s.rgb for s in pose_samples])
        _, pose_neck = model.rgb_features(pose_rgb)
        heat, off = model.predict_pose_maps(pose_neck)
        heats, offs, masks = [], [], []
        for s in pose_samples:
            ht, ot, mt = encode_pose_targets(s.keypoints, s.centers, (h, w))
            heats.append(ht), offs.append(ot), masks.append(mt)
        l_pose_t, _ = loss_pose(heat, off, np.stack(heats), np.stack(offs),
                                np.stack(masks))
        _check_finite(float(l_pose_t.data), "pose")

    weights = (cfg.lambda_depth, cfg.lambda_seg, cfg.lambda_det, cfg.lambda_pose)
    total = ops.add(
        ops.add(ops.mul(l_depth_t, weights[0]), ops.mul(l_seg_t, weights[1])),
        ops.add(ops.mul(l_det_t, weights[2]), ops.mul(l_pose_t, weights[3])))
    _check_finite(float(total.data), "total")
    return total, MultiTaskLoss(l_depth=float(l_depth_t.data), l_seg=float(l_seg_t.data),
                                l_det=float(l_det_t.data), l_pose=float(l_pose_t.data),
                                weights=weights, total=float(total.data))


def held_out_split(n, fraction):
    """(train_indices, eval_indices): the tail of the index range is held out."""
    if n < 2:
        raise DataError("dataset too small to split")
    n_eval = min(max(1, int(round(n * fraction))), n - 1)
    return list(range(n - n_eval)), list(range(n - n_eval, n))


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def evaluate_model(model, eval_scenes, eval_pose, cfg=None):
    """Held-out metrics: depth, seg-vs-teacher accuracy, mAP, keypoint AP."""
    out = {}
    preds, gts = [], []
    abs_rel, rms, d125, accs = [], [], [], []
    for frames in eval_scenes:
        for f in frames:
            res = infer_frame(model, f.rgb, f.sparse_depth, f.intrinsics,
                              tasks=("depth", "seg", "det"))
            dm = depth_metrics(res["depth"], f.gt_depth)
            abs_rel.append(dm.abs_rel), rms.append(dm.rms), d125.append(dm.delta_1_25)
            if f.teacher_seg is not None:
                micro, _ = seg_accuracy(res["seg_labels"], f.teacher_seg)
                accs.append(micro)
            preds.append(res["detections"])
            gts.append(f.gt_boxes)
    if abs_rel:
        out["depth_abs_rel"] = float(np.mean(abs_rel))
        out["depth_rms"] = float(np.mean(rms))
        out["depth_delta_1_25"] = float(np.mean(d125))
    if accs:
        out["seg_accuracy"] = float(np.mean(accs))
    if any(gts):
        out["det_map"] = map_3d(preds, gts).mean_ap
    if eval_pose:
        persons = [infer_pose(model, s.rgb) for s in eval_pose]
        out["pose_ap"] = keypoint_ap(persons, [s.keypoints for s in eval_pose]).mean_ap
    return out


@dataclass
class TrainResult:
    checkpoint_best: str
    checkpoint_final: str
    metrics_log: str
    history: list
    eval_metrics: dict


def train(cfg: TrainConfig, scenes_path, pose_path, out_dir, log=None):
    """Full training run; deterministic for a fixed config.

    Writes ``checkpoint_best.ckpt`` (lowest held-out total loss),
    ``checkpoint_final.ckpt``, and ``metrics.jsonl`` (one JSON record
    per step / per eval) under ``out_dir``.
    """
    os.makedirs(out_dir, exist_ok=True)
    scene_ds = SceneDataset(scenes_path)
    scenes = [scene_ds.load_scene(i) for i in range(len(scene_ds))]
    train_idx, eval_idx = held_out_split(len(scenes), cfg.eval_fraction)

    pose_train, pose_eval_samples = [], []
    if cfg.task_pose:
        pose_ds = PoseDataset(pose_path)
        samples = [pose_ds.load_sample(i) for i in range(len(pose_ds))]
        tr, ev = held_out_split(len(samples), cfg.eval_fraction)
        pose_train = [samples[i] for i in tr]
        pose_eval_samples = [samples[i] for i in ev]

    model = MultiTaskModel(np.random.default_rng([517, cfg.seed]),
                           use_semantics=cfg.use_semantics, use_color=cfg.use_color)
    optimizer = Adam([{"params": model.main_parameters(), "lr": cfg.lr_main},
                      {"params": model.depth_completion_parameters(),
                       "lr": cfg.lr_depth_head}])
    order_rng = np.random.default_rng([832, cfg.seed])

    log_path = os.path.join(out_dir, "metrics.jsonl")
    best_path = os.path.join(out_dir, "checkpoint_best.ckpt")
    final_path = os.path.join(out_dir, "checkpoint_final.ckpt")
    history = []
    best_eval = math.inf
    step = 0
    with open(log_path, "w", encoding="utf-8") as log_fh:
        for epoch in range(1, cfg.epochs + 1):
            perm = order_rng.permutation(train_idx)
            for chunk in _chunks(list(perm), cfg.batch_scenes):
                batch = [scenes[i] for i in chunk]
                pose_batch = []
                if cfg.task_pose:
                    pick = order_rng.choice(len(pose_train), size=cfg.batch_pose,
                                            replace=len(pose_train) < cfg.batch_pose)
                    pose_batch = [pose_train[i] for i in pick]
                reset_tape()
                total, ml = train_step(model, batch, pose_batch, cfg)
                backward(total)
                optimizer.step()
                optimizer.zero_grad()
                reset_tape()
                step += 1
                rec = {"step": step, "epoch": epoch, "total": ml.total,
                       "l_depth": ml.l_depth, "l_seg": ml.l_seg,
                       "l_det": ml.l_det, "l_pose": ml.l_pose}
                history.append(rec)
                log_fh.write(json.dumps(rec) + "\n")
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                ev = _eval_loss(model, [scenes[i] for i in eval_idx],
                                pose_eval_samples, cfg)
                log_fh.write(json.dumps({"epoch": epoch, "eval_total": ev}) + "\n")
                if log:
                    log(f"epoch {epoch}: train total {history[-1]['total']:.4f} "
                        f"eval total {ev:.4f}")
                if ev < best_eval:
                    best_eval = ev
                    save_checkpoint(best_path, model.state_arrays())
    save_checkpoint(final_path, model.state_arrays())
    if not os.path.exists(best_path):
        save_checkpoint(best_path, model.state_arrays())
    eval_metrics = evaluate_model(model, [scenes[i] for i in eval_idx],
                                  pose_eval_samples, cfg)
    with open(log_path, "a", encoding="utf-8") as log_fh:
        log_fh.write(json.dumps({"final_eval": eval_metrics}) + "\n")
    return TrainResult(checkpoint_best=best_path, checkpoint_final=final_path,
                       metrics_log=log_path, history=history,
                       eval_metrics=eval_metrics)


def _eval_loss(model, eval_scenes, pose_eval, cfg):
    """Held-out combined loss (forward only), for best-model selection."""
    totals = []
    with no_grad():
        for scene in eval_scenes:
            pose = pose_eval[: cfg.batch_pose] if cfg.task_pose else []
            total, _ = train_step(model, [scene], pose, cfg)
            totals.append(float(total.data))
    reset_tape()
    return float(np.mean(totals)) if totals else math.inf


def config_for_single_task(cfg: TrainConfig, task):
    """Copy of ``cfg`` with exactly one task enabled."""
    if task not in ("depth", "seg", "det", "pose"):
        raise DataError(f"unknown task {task!r}")
    kwargs = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    for t in ("depth", "seg", "det", "pose"):
        kwargs[f"task_{t}"] = t == task
    return TrainConfig(**kwargs)


def single_task_train(cfg: TrainConfig, scenes_path, pose_path, out_dir, log=None):
    """As train(), but requires exactly one enabled task."""
    if len(cfg.enabled_tasks()) != 1:
        raise DataError("single_task_train: exactly one task must be enabled, got "
                        f"{cfg.enabled_tasks()}")
    return train(cfg, scenes_path, pose_path, out_dir, log=log)
