"""Center-based multi-person keypoint estimation.

One sigmoid heatmap channel marks person centers at 1/4 resolution; a
2K-channel map regresses, at each center cell, the full-resolution
keypoint positions relative to that cell. Training uses the
penalty-reduced focal loss on the heatmap plus a masked L1 on the
offsets of visible keypoints.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Conv2d, ConvBlock, Module, Tensor, ops

NUM_KEYPOINTS = 5
STRIDE = 4
HEAT_SIGMA = 2.0
FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
PEAK_THRESHOLD = 0.05
MAX_PERSONS = 8


class PoseHead(Module):
    """Finest neck level -> center heatmap (sigmoid) + keypoint offsets."""

    def __init__(self, rng, in_channels=32, num_keypoints=NUM_KEYPOINTS, width=64):
        self.num_keypoints = num_keypoints
        self.refine = ConvBlock(rng, in_channels, width)
        self.refine2 = ConvBlock(rng, width, width)
        self.heat = Conv2d(rng, width, 1, k=1)
        # start the heatmap near the background prior so the focal loss
        # is not dominated by suppressing half-on background cells
        self.heat.b.data[:] = -4.0
        self.offset = Conv2d(rng, width, 2 * num_keypoints, k=1)

    def forward(self, neck_pyramid):
        x = self.refine2(self.refine(neck_pyramid[0]))
        return ops.sigmoid(self.heat(x)), self.offset(x)


def encode_pose_targets(keypoints, centers, image_hw, num_keypoints=NUM_KEYPOINTS):
    """Target maps for one image.

    keypoints: (P,K,3) with columns x, y, visible; centers: (P,2) x, y
    in pixels. Returns (heat (Hc,Wc), offsets (2K,Hc,Wc), offset_mask
    (2K,Hc,Wc)). The cell under each center is exactly 1 in the
    heatmap; surrounding cells carry a max-combined Gaussian. When two
    centers quantize to one cell the later person wins the offsets.
    """
    h, w = image_hw
    hc, wc = h // STRIDE, w // STRIDE
    heat = np.zeros((hc, wc), dtype=np.float32)
    offsets = np.zeros((2 * num_keypoints, hc, wc), dtype=np.float32)
    mask = np.zeros_like(offsets)
    gx, gy = np.meshgrid(np.arange(wc, dtype=np.float32),
                         np.arange(hc, dtype=np.float32))
    for person, center in zip(np.asarray(keypoints), np.asarray(centers)):
        cx = int(np.clip(np.round(center[0] / STRIDE), 0, wc - 1))
        cy = int(np.clip(np.round(center[1] / STRIDE), 0, hc - 1))
        g = np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2 * HEAT_SIGMA ** 2))
        heat = np.maximum(heat, g.astype(np.float32))
        heat[cy, cx] = 1.0
        for k in range(num_keypoints):
            x, y, vis = person[k]
            if vis <= 0:
                continue
            offsets[2 * k, cy, cx] = x - cx * STRIDE
            offsets[2 * k + 1, cy, cx] = y - cy * STRIDE
            mask[2 * k, cy, cx] = 1.0
            mask[2 * k + 1, cy, cx] = 1.0
    return heat, offsets, mask


def loss_pose(heat_pred, offset_pred, heat_t, offsets_t, offset_mask):
    """Focal heatmap loss + masked offset L1 (equal weight) for a batch.

    heat_pred: (N,1,Hc,Wc) Tensor in (0,1); offset_pred: (N,2K,Hc,Wc)
    Tensor; targets are matching ndarrays (heat_t (N,Hc,Wc)).
    """
    heat_t = np.asarray(heat_t, dtype=np.float32)
    if heat_t.ndim == 2:
        heat_t = heat_t[None]
    n, hc, wc = heat_t.shape
    p = ops.clip(ops.reshape(heat_pred, (n, hc, wc)), 1e-6, 1.0 - 1e-6)
    pos = (heat_t >= 1.0).astype(np.float32)
    one_minus_p = ops.sub(1.0, p)
    l_pos = ops.mul(ops.mul(ops.mul(one_minus_p, one_minus_p), ops.log(p)), pos)
    neg_w = ((1.0 - heat_t) ** FOCAL_BETA) * (1.0 - pos)
    l_neg = ops.mul(ops.mul(ops.mul(p, p), ops.log(one_minus_p)), neg_w)
    n_pos = max(float(pos.sum()), 1.0)
    l_heat = ops.mul(ops.add(ops.sum_(l_pos), ops.sum_(l_neg)), -1.0 / n_pos)

    off_t = np.asarray(offsets_t, dtype=np.float32)
    if off_t.ndim == 3:
        off_t = off_t[None]
    m = np.asarray(offset_mask, dtype=np.float32)
    if m.ndim == 3:
        m = m[None]
    l_off = ops.l1(offset_pred, Tensor(off_t), weight=m)
    total = ops.add(l_heat, l_off)
    return total, {"l_heat": float(l_heat.data), "l_offset": float(l_off.data)}


OKS_SIGMA = 0.1


def oks_similarity(pred_kps, gt_person):
    """Object-keypoint similarity between predicted and true keypoints.

    pred_kps: (K,2); gt_person: (K,3) with x, y, visible. Similarity is
    exp(-d^2 / (2 s^2 sigma^2)) averaged over visible keypoints, where
    s is the diagonal of the bounding box of all the person's
    keypoints (floored at 1 px). Returns 0 when nothing is visible.
    """
    gt = np.asarray(gt_person, dtype=np.float64)
    vis = gt[:, 2] > 0
    if not vis.any():
        return 0.0
    span = gt[:, :2].max(axis=0) - gt[:, :2].min(axis=0)
    s = max(float(np.hypot(span[0], span[1])), 1.0)
    d2 = np.sum((np.asarray(pred_kps, dtype=np.float64)[vis] - gt[vis, :2]) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * s * s * OKS_SIGMA ** 2))))


def _local_maxima(heat):
    pad = np.full((heat.shape[0] + 2, heat.shape[1] + 2), -np.inf, dtype=heat.dtype)
    pad[1:-1, 1:-1] = heat
    best = heat.copy()
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            best = np.maximum(best, pad[1 + dv: pad.shape[0] - 1 + dv,
                                        1 + du: pad.shape[1] - 1 + du])
    return heat >= best


def decode_keypoints(heat, offsets, threshold=PEAK_THRESHOLD, max_persons=MAX_PERSONS,
                     num_keypoints=NUM_KEYPOINTS):
    """Persons from one image's predicted maps.

    heat: (Hc,Wc) or (1,Hc,Wc) ndarray; offsets: (2K,Hc,Wc) ndarray.
    Returns a list of dicts with score, center (x,y), keypoints (K,2),
    best score first.
    """
    heat = np.asarray(heat)
    if heat.ndim == 3:
        heat = heat[0]
    peaks = _local_maxima(heat) & (heat > threshold)
    vs, us = np.nonzero(peaks)
    order = np.argsort(-heat[vs, us], kind="stable")[:max_persons]
    out = []
    for i in order:
        cy, cx = int(vs[i]), int(us[i])
        kps = np.empty((num_keypoints, 2), dtype=np.float64)
        for k in range(num_keypoints):
            kps[k, 0] = cx * STRIDE + offsets[2 * k, cy, cx]
            kps[k, 1] = cy * STRIDE + offsets[2 * k + 1, cy, cx]
        out.append({"score": float(heat[cy, cx]),
                    "center": np.array([cx * STRIDE, cy * STRIDE], dtype=np.float64),
                    "keypoints": kps})
    return out
