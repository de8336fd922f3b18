"""Network modules: shared backbones, task heads, and the combined model."""

from .backbone import (NECK_CHANNELS, RGB_STAGE_CHANNELS, SPARSE_STAGE_CHANNELS,
                       BackboneRGB, BackboneSparseDepth, BiFPNLayer, FusionNode,
                       NeckRGB, sparse_depth_input)
from .depth_completion import (D_MAX, D_MIN, DepthHead, EgomotionNet,
                               loss_depth_completion, warp_from_prediction)
from .detection import (DetectionInternals, PointBackbone, VoteHead,
                        build_colored_cloud, ball_group, decode_detections,
                        farthest_point_indices, loss_detection, run_detection,
                        sample_semantics)
from .human_pose import (NUM_KEYPOINTS, PoseHead, decode_keypoints,
                         encode_pose_targets, loss_pose)
from .model import MultiTaskModel, infer_frame, infer_pose, softmax_np
from .segmentation import SegHead, loss_distill, predict_labels, seg_accuracy

__all__ = [
    "NECK_CHANNELS", "RGB_STAGE_CHANNELS", "SPARSE_STAGE_CHANNELS",
    "BackboneRGB", "BackboneSparseDepth", "BiFPNLayer", "FusionNode", "NeckRGB",
    "sparse_depth_input",
    "D_MAX", "D_MIN", "DepthHead", "EgomotionNet", "loss_depth_completion",
    "warp_from_prediction",
    "DetectionInternals", "PointBackbone", "VoteHead", "build_colored_cloud",
    "ball_group", "decode_detections", "farthest_point_indices", "loss_detection",
    "run_detection", "sample_semantics",
    "NUM_KEYPOINTS", "PoseHead", "decode_keypoints", "encode_pose_targets",
    "loss_pose",
    "MultiTaskModel", "infer_frame", "infer_pose", "softmax_np",
    "SegHead", "loss_distill", "predict_labels", "seg_accuracy",
]
