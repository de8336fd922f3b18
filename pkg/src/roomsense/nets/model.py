"""The full multi-task model: shared backbones + one head per task."""

from __future__ import annotations

import numpy as np

from ..autodiff import Module, Tensor, no_grad, ops
from .backbone import NECK_CHANNELS, BackboneRGB, BackboneSparseDepth, NeckRGB, sparse_depth_input
from .depth_completion import DepthHead, EgomotionNet, warp_from_prediction
from .detection import PointBackbone, VoteHead, decode_detections, run_detection
from .human_pose import NUM_KEYPOINTS, PoseHead, decode_keypoints
from .segmentation import SegHead
from ..synth.scenes import NUM_CLASSES


def softmax_np(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class MultiTaskModel(Module):
    """RGB + sparse-lidar backbones feeding depth/seg/detection/pose heads.

    The neck sees only the RGB pyramid; the sparse-depth pyramid joins
    in the depth decoder and egomotion net. Detection runs downstream
    of (detached) predicted depth and segmentation.
    """

    def __init__(self, rng, num_classes=NUM_CLASSES, num_keypoints=NUM_KEYPOINTS,
                 use_semantics=True, use_color=True):
        self.num_classes = num_classes
        self.use_color = use_color
        self.backbone_rgb = BackboneRGB(rng)
        self.backbone_sparse = BackboneSparseDepth(rng)
        self.neck = NeckRGB(rng)
        self.depth_head = DepthHead(rng)
        self.egomotion = EgomotionNet(rng)
        self.seg_head = SegHead(rng, NECK_CHANNELS, num_classes)
        self.point_backbone = PointBackbone(rng)
        self.vote_head = VoteHead(rng, use_semantics=use_semantics)
        self.pose_head = PoseHead(rng, NECK_CHANNELS, num_keypoints)

    # -- feature extraction ------------------------------------------------

    def rgb_features(self, rgb):
        """rgb (N,3,H,W) Tensor/array -> (rgb_pyramid, neck_pyramid)."""
        pyr = self.backbone_rgb(Tensor(rgb) if not isinstance(rgb, Tensor) else rgb)
        return pyr, self.neck(pyr)

    def sparse_features(self, sparse_depth_batch):
        """(N,H,W) lidar maps -> sparse pyramid."""
        stacked = np.stack([sparse_depth_input(s) for s in np.asarray(sparse_depth_batch)])
        return self.backbone_sparse(Tensor(stacked))

    # -- task heads ----------------------------------------------------------

    def predict_depth(self, rgb_pyr, sp_pyr):
        return self.depth_head(rgb_pyr, sp_pyr)

    def predict_egomotion(self, feats_t, feats_neighbor):
        return self.egomotion(feats_t, feats_neighbor)

    def predict_seg_logits(self, neck_pyr):
        return self.seg_head(neck_pyr)

    def predict_pose_maps(self, neck_pyr):
        return self.pose_head(neck_pyr)

    def detect(self, depth_np, rgb_np, seg_probs_np, intr):
        """Proposal internals from detached per-frame arrays."""
        return run_detection(self.point_backbone, self.vote_head,
                             depth_np, rgb_np, seg_probs_np, intr,
                             use_color=self.use_color)

    # -- optimizer grouping --------------------------------------------------

    def depth_completion_parameters(self):
        """The depth decoder + egomotion net: the low-lr Adam group."""
        return ([p for _, p in self.depth_head.named_parameters()]
                + [p for _, p in self.egomotion.named_parameters()])

    def main_parameters(self):
        low = {id(p) for p in self.depth_completion_parameters()}
        return [p for _, p in self.named_parameters() if id(p) not in low]


def infer_frame(model, rgb, sparse_depth, intr, tasks=("depth", "seg", "det")):
    """Per-frame inference with no gradient tape.

    Returns a dict with any of: depth (H,W) float32, seg_labels (H,W),
    seg_probs (C,H,W), detections (list of Box3D).
    """
    out = {}
    with no_grad():
        rgb = np.asarray(rgb, dtype=np.float32)
        rgb_pyr, neck_pyr = model.rgb_features(rgb[None])
        need_depth = "depth" in tasks or "det" in tasks
        need_seg = "seg" in tasks or "det" in tasks
        if need_depth:
            sp_pyr = model.sparse_features(np.asarray(sparse_depth)[None])
            depth = model.predict_depth(rgb_pyr, sp_pyr).data[0]
            if "depth" in tasks:
                out["depth"] = depth
        if need_seg:
            logits = model.predict_seg_logits(neck_pyr).data[0]
            probs = softmax_np(logits, axis=0)
            if "seg" in tasks:
                out["seg_labels"] = np.argmax(logits, axis=0).astype(np.uint8)
                out["seg_probs"] = probs
        if "det" in tasks:
            internals = model.detect(depth, rgb, probs, intr)
            out["detections"] = decode_detections(internals)
    return out


def infer_pose(model, rgb):
    """Person/keypoint decode for one pose image (no tape)."""
    with no_grad():
        _, neck_pyr = model.rgb_features(np.asarray(rgb, dtype=np.float32)[None])
        heat, off = model.predict_pose_maps(neck_pyr)
    return decode_keypoints(heat.data[0], off.data[0])
