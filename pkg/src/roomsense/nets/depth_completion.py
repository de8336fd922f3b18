"""Self-supervised depth completion: dense decoder, egomotion net, losses.

The decoder consumes BOTH backbone pyramids (RGB + sparse depth) and
upsamples with skip connections to full resolution; the output passes
through a sigmoid and the map depth = 1 / (a*sigma + b), which pins the
range to [d_min, d_max] for any weights. Training supervision is sparse
lidar L1 plus a photometric term against the current frame; dense
ground-truth depth never enters this module.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Conv2d, ConvBlock, Linear, Module, Tensor, ops
from ..errors import ShapeError
from ..geometry import axis_angle_to_matrix, inverse_warp

D_MIN = 0.1
D_MAX = 10.0
# depth = 1/(a*sigma + b): sigma=0 -> d_max, sigma=1 -> d_min.
_B = 1.0 / D_MAX
_A = 1.0 / D_MIN - _B

TRANSLATION_SCALE = 0.01


class DepthHead(Module):
    """U-style decoder over the concatenated RGB + sparse pyramids."""

    def __init__(self, rng, rgb_channels=(32, 48, 64), sp_channels=(24, 32, 32)):
        c2 = rgb_channels[0] + sp_channels[0]
        c3 = rgb_channels[1] + sp_channels[1]
        c4 = rgb_channels[2] + sp_channels[2]
        self.dec4 = ConvBlock(rng, c4, 48)
        self.dec3 = ConvBlock(rng, 48 + c3, 32)
        self.dec2 = ConvBlock(rng, 32 + c2, 32)
        self.dec1 = ConvBlock(rng, 32, 16)
        self.dec0 = ConvBlock(rng, 16, 12)
        self.out = Conv2d(rng, 12, 1, k=1)

    def forward(self, rgb_pyr, sp_pyr):
        for a, b in zip(rgb_pyr, sp_pyr):
            if a.shape[2:] != b.shape[2:]:
                raise ShapeError("head_depth", a.shape, b.shape,
                                 detail="pyramid spatial dims differ")
        f2 = ops.concat([rgb_pyr[0], sp_pyr[0]], axis=1)
        f3 = ops.concat([rgb_pyr[1], sp_pyr[1]], axis=1)
        f4 = ops.concat([rgb_pyr[2], sp_pyr[2]], axis=1)
        x = self.dec4(f4)
        x = self.dec3(ops.concat([ops.nearest_upsample2x(x), f3], axis=1))
        x = self.dec2(ops.concat([ops.nearest_upsample2x(x), f2], axis=1))
        x = self.dec1(ops.nearest_upsample2x(x))
        x = self.dec0(ops.nearest_upsample2x(x))
        sigma = ops.sigmoid(self.out(x))
        n, _, h, w = sigma.shape
        denom = ops.add(ops.mul(sigma, _A), _B)
        return ops.reshape(ops.div(1.0, denom), (n, h, w))


class EgomotionNet(Module):
    """Relative pose from the coarsest features of both frames.

    Output is 6 numbers: axis-angle + translation, translation scaled by
    0.01. The final linear layer is zero-initialized so the untrained
    network predicts the identity transform.
    """

    def __init__(self, rng, rgb_c4=64, sp_c4=32, hidden=32):
        cin = 2 * (rgb_c4 + sp_c4)
        self.reduce = Conv2d(rng, cin, hidden, k=1)
        self.mix = ConvBlock(rng, hidden, hidden)
        self.head = Linear(rng, hidden, 6, zero_init=True)

    def forward(self, feats_t, feats_neighbor):
        rgb_t, sp_t = feats_t
        rgb_n, sp_n = feats_neighbor
        return self.from_p4(rgb_t[2], sp_t[2], rgb_n[2], sp_n[2])

    def from_p4(self, rgb_p4_t, sp_p4_t, rgb_p4_n, sp_p4_n):
        """Pose rows from already-gathered coarsest-level features."""
        x = ops.concat([rgb_p4_t, sp_p4_t, rgb_p4_n, sp_p4_n], axis=1)
        x = self.mix(ops.relu(self.reduce(x)))
        pooled = ops.mean(x, axis=(2, 3))
        out = self.head(pooled)
        axis_angle = ops.slice_axis(out, 1, 0, 3)
        translation = ops.mul(ops.slice_axis(out, 1, 3, 6), TRANSLATION_SCALE)
        return axis_angle, translation


def warp_from_prediction(neighbor_rgb, depth, axis_angle, translation, intr):
    """inverse_warp with a predicted 6-dof pose for one frame."""
    rot = axis_angle_to_matrix(ops.reshape(axis_angle, (3,)))
    t = ops.reshape(translation, (3,))
    return inverse_warp(neighbor_rgb, depth, rot, t, intr)


def loss_depth_completion(pred_depth, sparse_depth, warped_and_masks, ref_rgb):
    """L_sparse + L_photo for one frame.

    pred_depth: (H,W) Tensor; sparse_depth: (H,W) ndarray with zero =
    missing; warped_and_masks: list of (warped (3,H,W) Tensor, mask
    (H,W) bool) from the available temporal neighbors; ref_rgb: (3,H,W)
    ndarray, the current frame being reconstructed.

    Returns (total, parts) where parts records the scalar values and a
    flag per term that had zero valid pixels (term contributes 0).
    """
    parts = {"warnings": []}
    sp = np.asarray(sparse_depth, dtype=np.float32)
    weight = (sp > 0).astype(np.float32)
    if weight.sum() > 0:
        l_sparse = ops.l1(pred_depth, Tensor(sp), weight=weight)
    else:
        l_sparse = ops.mul(ops.sum_(pred_depth), 0.0)
        parts["warnings"].append("sparse term has zero valid pixels")
    parts["l_sparse"] = float(l_sparse.data)

    photo_terms = []
    for warped, mask in warped_and_masks:
        w = np.broadcast_to(mask.astype(np.float32), warped.shape).copy()
        if mask.sum() == 0:
            parts["warnings"].append("photometric term has zero valid pixels")
            continue
        term = ops.l1(warped, Tensor(np.asarray(ref_rgb, dtype=np.float32)), weight=w)
        # warp coords run in float64; the combined loss stays float32
        photo_terms.append(ops.cast(term, np.float32))
    if photo_terms:
        l_photo = photo_terms[0]
        for t in photo_terms[1:]:
            l_photo = ops.add(l_photo, t)
        l_photo = ops.mul(l_photo, 1.0 / len(photo_terms))
    else:
        l_photo = ops.mul(ops.sum_(pred_depth), 0.0)
        if not warped_and_masks:
            parts["warnings"].append("no photometric neighbors")
    parts["l_photo"] = float(l_photo.data)
    return ops.add(l_sparse, l_photo), parts
