"""Procedural room scenes: layout sampling and smooth camera trajectories.

World frame is z-up with the room spanning [0, L] on each axis. The
camera frame is x-right, y-down, z-forward; right = world_down x forward
keeps the horizon level. All sampling is driven by one seeded Generator,
so a SceneSpec is a pure function of (seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..geometry import CameraIntrinsics

CLASS_NAMES = ("wall", "floor", "ceiling", "crate", "cabinet", "table", "lamp", "bin")
NUM_CLASSES = len(CLASS_NAMES)
OBJECT_CLASS_OFFSET = 3

# Per object class: ((sx_lo, sx_hi), (sy_lo, sy_hi), (sz_lo, sz_hi)) meters.
# Ranges are deliberately disjoint-ish so size is a usable class cue.
OBJECT_SIZE_RANGES = {
    3: ((0.50, 0.80), (0.50, 0.80), (0.45, 0.70)),   # crate
    4: ((0.40, 0.60), (0.40, 0.60), (1.30, 1.80)),   # cabinet
    5: ((1.00, 1.40), (0.60, 0.90), (0.60, 0.80)),   # table
    6: ((0.15, 0.28), (0.15, 0.28), (1.00, 1.40)),   # lamp
    7: ((0.25, 0.40), (0.25, 0.40), (0.28, 0.42)),   # bin
}

# Base albedo (RGB) per class; object hues are deliberately separated.
CLASS_ALBEDO = {
    0: (0.62, 0.60, 0.58),   # wall
    1: (0.45, 0.34, 0.24),   # floor
    2: (0.85, 0.85, 0.82),   # ceiling
    3: (0.70, 0.25, 0.20),   # crate
    4: (0.20, 0.30, 0.70),   # cabinet
    5: (0.20, 0.60, 0.25),   # table
    6: (0.75, 0.70, 0.15),   # lamp
    7: (0.65, 0.20, 0.60),   # bin
}

MAX_STEP_T = 0.05          # meters per frame
MAX_STEP_R = np.deg2rad(3.0)

_WALL_MARGIN = 0.45
_OBJ_CLEARANCE = 0.30


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 48
    lidar_grid: tuple = (16, 12)
    frames_per_scene: int = 4
    objects_min: int = 2
    objects_max: int = 4
    fov_deg: float = 60.0
    teacher_noise_rate: float = 0.10
    min_visible_pixels: int = 10
    persons_min: int = 1
    persons_max: int = 3

    def intrinsics(self):
        fx = self.width / (2.0 * np.tan(np.deg2rad(self.fov_deg) / 2.0))
        return CameraIntrinsics(fx, fx, (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                                self.width, self.height)


@dataclass
class SceneObject:
    class_id: int
    center: np.ndarray        # world, meters
    size: np.ndarray
    albedo: np.ndarray        # base RGB
    texture_phase: int        # noise seed offset

    @property
    def lo(self):
        return self.center - self.size / 2

    @property
    def hi(self):
        return self.center + self.size / 2


@dataclass
class SceneSpec:
    seed: int
    room: np.ndarray                      # (3,) extents, meters
    objects: list
    light_dir: np.ndarray                 # unit, points from surface toward light
    cam_to_world: np.ndarray              # (F, 4, 4)
    intrinsics: CameraIntrinsics
    config: SynthConfig
    texture_seed: int = 0


def _camera_rotation(yaw, pitch):
    """R (3,3) with columns (right, down, forward) in world coords."""
    forward = np.array([np.cos(pitch) * np.cos(yaw),
                        np.cos(pitch) * np.sin(yaw),
                        np.sin(pitch)])
    world_down = np.array([0.0, 0.0, -1.0])
    right = np.cross(world_down, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def _pose_matrix(position, yaw, pitch):
    m = np.eye(4)
    m[:3, :3] = _camera_rotation(yaw, pitch)
    m[:3, 3] = position
    return m


def _too_close(pos, objects, clearance):
    for obj in objects:
        lo = obj.lo - clearance
        hi = obj.hi + clearance
        if np.all(pos >= lo) and np.all(pos <= hi):
            return True
    return False


def _sample_objects(rng, room, n_objects):
    """Non-overlapping floor-standing boxes; bounded retries then error."""
    objects = []
    classes = [int(rng.integers(0, 5)) + OBJECT_CLASS_OFFSET for _ in range(n_objects)]
    for k, cls in enumerate(classes):
        (sxr, syr, szr) = OBJECT_SIZE_RANGES[cls]
        placed = False
        for _ in range(200):
            size = np.array([rng.uniform(*sxr), rng.uniform(*syr), rng.uniform(*szr)])
            margin = size[:2] / 2 + _WALL_MARGIN
            if np.any(room[:2] - 2 * margin <= 0):
                continue
            cx = rng.uniform(margin[0], room[0] - margin[0])
            cy = rng.uniform(margin[1], room[1] - margin[1])
            center = np.array([cx, cy, size[2] / 2])
            lo, hi = center - size / 2, center + size / 2
            clash = False
            for other in objects:
                sep = np.maximum(other.lo[:2] - hi[:2], lo[:2] - other.hi[:2])
                if np.max(sep) < 0.15:
                    clash = True
                    break
            if not clash:
                base = np.array(CLASS_ALBEDO[cls])
                albedo = np.clip(base * rng.uniform(0.85, 1.15), 0.05, 0.95)
                objects.append(SceneObject(cls, center, size, albedo, 1000 + k))
                placed = True
                break
        if not placed:
            raise DataError(f"object placement failed for class {cls} after 200 tries")
    return objects


def _sample_trajectory(rng, room, objects, n_frames):
    """Bounded-step random walk that stays clear of walls and objects."""
    for _ in range(200):
        pos = np.array([rng.uniform(_WALL_MARGIN + 0.2, room[0] - _WALL_MARGIN - 0.2),
                        rng.uniform(_WALL_MARGIN + 0.2, room[1] - _WALL_MARGIN - 0.2),
                        rng.uniform(1.25, min(1.7, room[2] - 0.6))])
        if not _too_close(pos, objects, _OBJ_CLEARANCE + 0.15):
            break
    else:
        raise DataError("camera start placement failed after 200 tries")

    # Aim roughly at the room center so content is in view.
    target = np.array([room[0] / 2, room[1] / 2, 1.0])
    look = target - pos
    yaw = np.arctan2(look[1], look[0]) + rng.uniform(-0.3, 0.3)
    pitch = rng.uniform(-0.12, 0.02)

    vel = rng.uniform(-1.0, 1.0, 3) * np.array([1.0, 1.0, 0.25])
    norm = np.linalg.norm(vel)
    vel = vel / norm * MAX_STEP_T * 0.8 if norm > 0 else np.zeros(3)
    yaw_rate = rng.uniform(-MAX_STEP_R, MAX_STEP_R) * 0.7

    poses = [_pose_matrix(pos, yaw, pitch)]
    for _ in range(n_frames - 1):
        for _ in range(50):
            jitter = rng.uniform(-1.0, 1.0, 3) * np.array([0.01, 0.01, 0.003])
            cand_v = vel + jitter
            speed = np.linalg.norm(cand_v)
            if speed > MAX_STEP_T * 0.9:
                cand_v *= (MAX_STEP_T * 0.9) / speed
            cand = pos + cand_v
            inside = (np.all(cand[:2] >= _WALL_MARGIN) and
                      np.all(cand[:2] <= room[:2] - _WALL_MARGIN) and
                      1.0 <= cand[2] <= room[2] - 0.5)
            if inside and not _too_close(cand, objects, _OBJ_CLEARANCE):
                pos, vel = cand, cand_v
                break
            vel = -vel * 0.5 + rng.uniform(-1.0, 1.0, 3) * 0.01
        yaw_rate = np.clip(yaw_rate + rng.uniform(-0.5, 0.5) * MAX_STEP_R * 0.3,
                           -MAX_STEP_R * 0.9, MAX_STEP_R * 0.9)
        yaw += yaw_rate
        pitch = np.clip(pitch + rng.uniform(-0.2, 0.2) * MAX_STEP_R * 0.3, -0.25, 0.08)
        poses.append(_pose_matrix(pos, yaw, pitch))
    return np.stack(poses)


def generate_scene(seed, config: SynthConfig) -> SceneSpec:
    rng = np.random.default_rng(np.random.SeedSequence([7701, int(seed)]))
    # A crowded draw can be unplaceable; resample the whole layout then.
    for attempt in range(20):
        room = np.array([rng.uniform(3.6, 5.4), rng.uniform(3.6, 5.4),
                         rng.uniform(2.5, 3.0)])
        n_objects = int(rng.integers(config.objects_min, config.objects_max + 1))
        try:
            objects = _sample_objects(rng, room, n_objects)
            break
        except DataError:
            if attempt == 19:
                raise
    # Light from above at a random tilt; fixed for the whole scene.
    tilt = rng.uniform(0.15, 0.45)
    ang = rng.uniform(0, 2 * np.pi)
    light = np.array([np.sin(tilt) * np.cos(ang), np.sin(tilt) * np.sin(ang), np.cos(tilt)])
    cam = _sample_trajectory(rng, room, objects, config.frames_per_scene)
    return SceneSpec(seed=int(seed), room=room, objects=objects, light_dir=light,
                     cam_to_world=cam, intrinsics=config.intrinsics(), config=config,
                     texture_seed=int(rng.integers(0, 2 ** 31 - 1)))


def make_empty_room_pair_spec(seed, config: SynthConfig) -> SceneSpec:
    """Two-frame spec of an object-free (convex) room.

    From inside a convex room every surface point is visible from both
    cameras, so a warp between the pair has no disocclusions. Used to
    measure the pure interpolation floor of the photometric loss.
    """
    rng = np.random.default_rng(np.random.SeedSequence([7702, int(seed)]))
    room = np.array([rng.uniform(3.6, 5.4), rng.uniform(3.6, 5.4), rng.uniform(2.5, 3.0)])
    tilt = rng.uniform(0.15, 0.45)
    ang = rng.uniform(0, 2 * np.pi)
    light = np.array([np.sin(tilt) * np.cos(ang), np.sin(tilt) * np.sin(ang), np.cos(tilt)])
    cam = _sample_trajectory(rng, room, [], 2)
    return SceneSpec(seed=int(seed), room=room, objects=[], light_dir=light,
                     cam_to_world=cam, intrinsics=config.intrinsics(), config=config,
                     texture_seed=int(rng.integers(0, 2 ** 31 - 1)))
