from .io import (PoseDataset, SceneDataset, generate_pose_dataset,
                 generate_scene_dataset, pack_blob, unpack_blob)
from .people import KEYPOINT_NAMES, NUM_KEYPOINTS, PoseSample, generate_pose_sample
from .render import (Frame, covisibility_mask, render_frame, render_scene,
                     sample_sparse_lidar, smooth_region_mask, teacher_labels)
from .scenes import (CLASS_NAMES, NUM_CLASSES, OBJECT_CLASS_OFFSET, SceneObject,
                     SceneSpec, SynthConfig, generate_scene,
                     make_empty_room_pair_spec)

__all__ = [
    "SynthConfig", "SceneSpec", "SceneObject", "generate_scene",
    "make_empty_room_pair_spec", "CLASS_NAMES", "NUM_CLASSES",
    "OBJECT_CLASS_OFFSET", "Frame", "render_frame", "render_scene",
    "sample_sparse_lidar", "teacher_labels", "covisibility_mask",
    "smooth_region_mask", "PoseSample", "generate_pose_sample",
    "KEYPOINT_NAMES", "NUM_KEYPOINTS", "SceneDataset", "PoseDataset",
    "generate_scene_dataset", "generate_pose_dataset", "pack_blob",
    "unpack_blob",
]
