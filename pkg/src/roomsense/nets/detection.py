"""Voting-based 3D detection on a colored point cloud.

The cloud is lifted from the (detached) predicted depth map, colored
with the RGB frame, and optionally enriched with per-point semantic
class probabilities bilinearly sampled from the (detached) segmentation
output. Seeds vote for object centers; votes are clustered and each
cluster emits one box proposal.

Ablation switches (``use_color``, ``use_semantics``) zero the
corresponding input features instead of changing layer shapes, so every
variant shares one checkpoint layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Linear, Module, Tensor, ops
from ..errors import DataError
from ..geometry import Box3D, backward_project_np, forward_project_np, nms_3d
from ..synth.scenes import NUM_CLASSES, OBJECT_CLASS_OFFSET

NUM_OBJECT_CLASSES = NUM_CLASSES - OBJECT_CLASS_OFFSET

N_POINTS = 2048
N_SEEDS = 128
GROUP_RADIUS = 0.4
GROUP_K = 32
N_CLUSTERS = 16
CLUSTER_RADIUS = 0.3
CLUSTER_K = 32

SIZE_FLOOR = 0.05
OBJ_THRESHOLD = 0.05
NMS_IOU = 0.25
POS_RADIUS = 0.3
NEG_RADIUS = 0.6

W_VOTE = 1.0
W_OBJ = 0.5
W_CENTER = 1.0
W_SIZE = 1.0
W_CLASS = 0.5


_SUBSAMPLE_SEED = 0x5EED


def build_colored_cloud(depth, rgb, intr, n_max=N_POINTS):
    """(xyz (N,3), color (N,3)) float32 from a depth map and image.

    Pixels with non-positive depth are dropped; clouds larger than
    ``n_max`` are uniformly subsampled with a fixed seed, so the same
    inputs always give the same cloud.
    """
    xyz, _, colors = backward_project_np(np.asarray(depth), intr, rgb=np.asarray(rgb))
    n = xyz.shape[0]
    if n == 0:
        raise DataError("empty point cloud: no pixels with positive depth")
    if n > n_max:
        rng = np.random.default_rng(_SUBSAMPLE_SEED)
        pick = np.sort(rng.choice(n, size=n_max, replace=False))
        xyz, colors = xyz[pick], colors[pick]
    return xyz.astype(np.float32), colors.astype(np.float32)


def farthest_point_indices(xyz, k, start=0):
    """Greedy farthest-point subset of ``k`` indices, seeded at ``start``."""
    n = xyz.shape[0]
    if n == 0:
        raise DataError("farthest_point_indices: empty input")
    if k >= n:
        return np.arange(n, dtype=np.int64)
    picked = np.empty(k, dtype=np.int64)
    picked[0] = start
    dist = np.sum((xyz - xyz[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        picked[i] = nxt
        dist = np.minimum(dist, np.sum((xyz - xyz[nxt]) ** 2, axis=1))
    return picked


def ball_group(xyz, center_idx, radius, k):
    """(M,k) member indices per center: first k in-radius points by index.

    Rows with fewer than k neighbors repeat the center itself, which is
    always in radius, so downstream feature maxima are well defined.
    """
    centers = xyz[center_idx]
    d2 = np.sum((xyz[None, :, :] - centers[:, None, :]) ** 2, axis=2)
    within = d2 <= radius * radius
    # stable argsort on ~within lists in-radius indices first, index order kept
    order = np.argsort(~within, axis=1, kind="stable")[:, :k]
    hit = np.take_along_axis(within, order, axis=1)
    return np.where(hit, order, np.asarray(center_idx, dtype=np.int64)[:, None])


class PointBackbone(Module):
    """Per-seed local feature: shared point MLP + max over the group."""

    def __init__(self, rng, feat=64, hidden=32):
        self.feat = feat
        self.fc1 = Linear(rng, 6, hidden)
        self.fc2 = Linear(rng, hidden, feat)

    def forward(self, xyz, colors, seed_idx, group_idx):
        m, k = group_idx.shape
        rel = xyz[group_idx] - xyz[seed_idx][:, None, :]
        f = np.concatenate([rel, colors[group_idx]], axis=2).reshape(m * k, 6)
        h = ops.relu(self.fc1(Tensor(f.astype(np.float32))))
        h = ops.relu(self.fc2(h))
        return ops.reduce_max(ops.reshape(h, (m, k, self.feat)), axis=1)


def sample_semantics(seed_xyz, seg_probs, intr):
    """(M,C) class probabilities at the seeds' image projections.

    ``seg_probs`` is a plain (C,H,W) array (already detached). Seeds
    that project outside the image, or behind the camera, get zeros.
    """
    probs = np.asarray(seg_probs, dtype=np.float32)
    c, h, w = probs.shape
    uv, valid = forward_project_np(seed_xyz, intr)
    out = np.zeros((seed_xyz.shape[0], c), dtype=np.float32)
    if not valid.any():
        return out
    u = np.clip(uv[valid, 0], 0, w - 1)
    v = np.clip(uv[valid, 1], 0, h - 1)
    u0 = np.clip(np.floor(u).astype(np.int64), 0, w - 2)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, h - 2)
    wx = (u - u0).astype(np.float32)
    wy = (v - v0).astype(np.float32)
    sampled = (probs[:, v0, u0] * (1 - wx) * (1 - wy)
               + probs[:, v0, u0 + 1] * wx * (1 - wy)
               + probs[:, v0 + 1, u0] * (1 - wx) * wy
               + probs[:, v0 + 1, u0 + 1] * wx * wy)
    out[valid] = sampled.T
    return out


@dataclass
class DetectionInternals:
    """Intermediate tensors kept around for the loss and for tests."""

    seed_xyz: np.ndarray          # (M,3) constant
    vote_xyz: "Tensor"            # (M,3)
    cluster_xyz_np: np.ndarray    # (P,3) cluster positions, for assignment
    obj_logits: "Tensor"          # (P,2)
    center: "Tensor"              # (P,3)
    size: "Tensor"                # (P,3) after softplus + floor
    class_logits: "Tensor"        # (P,NUM_OBJECT_CLASSES)


class VoteHead(Module):
    """Votes, vote clustering, and per-cluster box proposals.

    With ``use_semantics`` the vote MLP consumes F+C features (seed
    features plus sampled class probabilities); without it the input is
    plain F-wide, so the two variants have different weight shapes and
    separate checkpoints.
    """

    def __init__(self, rng, feat=64, num_sem=NUM_CLASSES,
                 num_classes=NUM_OBJECT_CLASSES, use_semantics=True):
        self.feat = feat
        self.use_semantics = use_semantics
        in_dim = feat + (num_sem if use_semantics else 0)
        self.vote_fc1 = Linear(rng, in_dim, 128)
        self.vote_fc2 = Linear(rng, 128, 3 + feat)
        self.cluster_fc = Linear(rng, 3 + feat, 128)
        self.prop_fc1 = Linear(rng, 128, 128)
        self.prop_fc2 = Linear(rng, 128, 2 + 3 + 3 + num_classes)
        # bias objectness toward background at init; most clusters are not
        # object centers and the CE should start from that prior
        self.prop_fc2.b.data[0] = 2.0

    def forward(self, seed_xyz, seed_feats, semantics=None):
        if self.use_semantics:
            if semantics is None:
                raise DataError("vote head built with semantic fusion needs semantics")
            x = ops.concat([seed_feats, Tensor(semantics)], axis=1)
        else:
            x = seed_feats
        h = ops.relu(self.vote_fc1(x))
        out = self.vote_fc2(h)
        vote_xyz = ops.add(Tensor(seed_xyz), ops.slice_axis(out, 1, 0, 3))
        vote_feat = ops.relu(ops.add(seed_feats, ops.slice_axis(out, 1, 3, 3 + self.feat)))

        votes_np = vote_xyz.data
        cluster_idx = farthest_point_indices(votes_np, N_CLUSTERS)
        group = ball_group(votes_np, cluster_idx, CLUSTER_RADIUS, CLUSTER_K)
        p, kc = group.shape
        member = ops.gather(vote_xyz, group.reshape(-1))
        center_rep = ops.gather(vote_xyz, np.repeat(cluster_idx, kc))
        rel = ops.sub(member, center_rep)
        g = ops.concat([rel, ops.gather(vote_feat, group.reshape(-1))], axis=1)
        h = ops.relu(self.cluster_fc(g))
        h = ops.reduce_max(ops.reshape(h, (p, kc, h.shape[1])), axis=1)
        h = ops.relu(self.prop_fc1(h))
        out = self.prop_fc2(h)

        cluster_xyz = ops.gather(vote_xyz, cluster_idx)
        return DetectionInternals(
            seed_xyz=seed_xyz,
            vote_xyz=vote_xyz,
            cluster_xyz_np=votes_np[cluster_idx],
            obj_logits=ops.slice_axis(out, 1, 0, 2),
            center=ops.add(cluster_xyz, ops.slice_axis(out, 1, 2, 5)),
            size=ops.add(ops.softplus(ops.slice_axis(out, 1, 5, 8)), SIZE_FLOOR),
            class_logits=ops.slice_axis(out, 1, 8, out.shape[1]),
        )


def run_detection(point_backbone, vote_head, depth, rgb, seg_probs, intr,
                  use_color=True):
    """Full per-frame pipeline from arrays to proposal internals."""
    xyz, colors = build_colored_cloud(depth, rgb, intr)
    if not use_color:
        colors = np.zeros_like(colors)
    seed_idx = farthest_point_indices(xyz, N_SEEDS)
    group_idx = ball_group(xyz, seed_idx, GROUP_RADIUS, GROUP_K)
    seed_feats = point_backbone(xyz, colors, seed_idx, group_idx)
    seed_xyz = xyz[seed_idx]
    semantics = (sample_semantics(seed_xyz, seg_probs, intr)
                 if vote_head.use_semantics else None)
    return vote_head(seed_xyz, seed_feats, semantics)


def _gt_fields(gt_boxes):
    """(class_ids, centers, sizes) from Box3D objects or (G,7) rows."""
    if len(gt_boxes) and isinstance(gt_boxes[0], Box3D):
        ids = np.array([b.class_id for b in gt_boxes], dtype=np.int64)
        centers = np.stack([b.center for b in gt_boxes])
        sizes = np.stack([b.size for b in gt_boxes])
        return ids, centers, sizes
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    return gt[:, 0].astype(np.int64), gt[:, 1:4], gt[:, 4:7]


def loss_detection(internals, gt_boxes):
    """Vote + objectness + box regression + classification for one frame.

    ``gt_boxes`` rows are (class_id, cx, cy, cz, sx, sy, sz) in the
    camera frame with class ids in the object range. Proposals nearer
    than ``POS_RADIUS`` to a ground-truth center are positive, farther
    than ``NEG_RADIUS`` negative, and in between ignored.
    """
    cls_ids, centers, sizes = _gt_fields(gt_boxes)
    m = internals.seed_xyz.shape[0]
    p = internals.cluster_xyz_np.shape[0]
    parts = {}

    if centers.shape[0] == 0:
        zero = ops.mul(ops.sum_(internals.vote_xyz), 0.0)
        obj_labels = np.zeros(p, dtype=np.int64)
        l_obj = ops.cross_entropy(internals.obj_logits, obj_labels)
        total = ops.add(zero, ops.mul(l_obj, W_OBJ))
        parts.update(l_vote=0.0, l_obj=float(l_obj.data), l_center=0.0,
                     l_size=0.0, l_class=0.0)
        return total, parts

    lo = centers - sizes / 2
    hi = centers + sizes / 2
    inside = np.all((internals.seed_xyz[:, None, :] >= lo[None]) &
                    (internals.seed_xyz[:, None, :] <= hi[None]), axis=2)
    seed_box = np.argmax(inside, axis=1)
    seed_on_obj = inside.any(axis=1)
    vote_targets = centers[seed_box].astype(np.float32)
    w_vote = np.repeat(seed_on_obj.astype(np.float32)[:, None], 3, axis=1)
    l_vote = ops.l1(internals.vote_xyz, Tensor(vote_targets), weight=w_vote)

    d = np.linalg.norm(internals.cluster_xyz_np[:, None, :] - centers[None], axis=2)
    nearest = np.argmin(d, axis=1)
    dmin = d[np.arange(p), nearest]
    pos = dmin < POS_RADIUS
    neg = dmin > NEG_RADIUS
    w_obj = (pos | neg).astype(np.float32)
    l_obj = ops.cross_entropy(internals.obj_logits, pos.astype(np.int64), weight=w_obj)

    w_pos3 = np.repeat(pos.astype(np.float32)[:, None], 3, axis=1)
    l_center = ops.l1(internals.center, Tensor(centers[nearest].astype(np.float32)),
                      weight=w_pos3)
    l_size = ops.l1(internals.size, Tensor(sizes[nearest].astype(np.float32)),
                    weight=w_pos3)
    local = cls_ids[nearest] - OBJECT_CLASS_OFFSET
    if local.min() < 0 or local.max() >= NUM_OBJECT_CLASSES:
        raise DataError("detection: ground-truth class id outside object range")
    l_class = ops.cross_entropy(internals.class_logits, local,
                                weight=pos.astype(np.float32))

    total = ops.add(
        ops.add(ops.mul(l_vote, W_VOTE), ops.mul(l_obj, W_OBJ)),
        ops.add(ops.add(ops.mul(l_center, W_CENTER), ops.mul(l_size, W_SIZE)),
                ops.mul(l_class, W_CLASS)))
    parts.update(l_vote=float(l_vote.data), l_obj=float(l_obj.data),
                 l_center=float(l_center.data), l_size=float(l_size.data),
                 l_class=float(l_class.data), n_pos=int(pos.sum()))
    return total, parts


def decode_detections(internals, obj_threshold=OBJ_THRESHOLD, nms_iou=NMS_IOU):
    """Thresholded, per-class NMS'd boxes from proposal internals."""
    logits = internals.obj_logits.data.astype(np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    prob = e[:, 1] / e.sum(axis=1)
    cls = np.argmax(internals.class_logits.data, axis=1) + OBJECT_CLASS_OFFSET
    boxes = []
    for i in np.flatnonzero(prob > obj_threshold):
        boxes.append(Box3D(center=internals.center.data[i],
                           size=internals.size.data[i],
                           class_id=int(cls[i]), score=float(prob[i])))
    kept = []
    for c in sorted({b.class_id for b in boxes}):
        kept.extend(nms_3d([b for b in boxes if b.class_id == c], iou_threshold=nms_iou))
    kept.sort(key=lambda b: -b.score)
    return kept
