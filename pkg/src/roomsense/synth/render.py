"""Analytic raycaster for box rooms with axis-aligned textured objects.

Rays are parameterized by camera z-depth: with unnormalized direction
d_cam = ((u-cx)/fx, (v-cy)/fy, 1) rotated into world coords, the hit at
parameter t has camera depth exactly t, so gt_depth stores plane depth
(a wall square to the optical axis reads a constant value; the ray
LENGTH to it is depth/cos of the ray angle).

Shading is flat Lambertian per face (ambient + diffuse against a fixed
scene light), view independent by construction, which is what makes the
photometric pair-consistency property hold down to interpolation error.
Textures are smoothstep value noise over in-plane world coordinates, so
a surface point keeps its color from any viewpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError
from ..geometry import Box3D, CameraIntrinsics, RelativePose, pixel_grid
from .scenes import CLASS_ALBEDO, NUM_CLASSES, SceneSpec

AMBIENT = 0.4
_TEX_SPACING = 0.40
_TEX_AMP = 0.20


@dataclass
class Frame:
    rgb: np.ndarray                 # (3,H,W) float32 in [0,1]
    sparse_depth: np.ndarray        # (H,W) float32, zero = missing
    intrinsics: CameraIntrinsics
    gt_depth: np.ndarray            # (H,W) float32, z-depth, > 0 everywhere
    gt_seg: np.ndarray              # (H,W) uint8 class ids
    gt_boxes: list                  # Box3D in this frame's camera frame
    cam_to_world: np.ndarray        # (4,4) float64
    frame_id: int = 0
    scene_id: int = 0
    gt_pose_to_next: RelativePose | None = None   # this camera -> next camera
    teacher_seg: np.ndarray | None = None         # (H,W) uint8, filled at dataset build

    @property
    def gt_keypoints(self):  # scenes carry no people; pose data is separate
        return []


def _hash01(ix, iy, seed):
    """Deterministic lattice hash -> uniform [0,1). Pure uint64 mixing."""
    seed_mixed = (int(seed) * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ np.uint64(seed_mixed))
    h ^= h >> np.uint64(29)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(32)
    return (h & np.uint64(0xFFFFFF)).astype(np.float64) / float(1 << 24)


def value_noise(x, y, seed):
    """Smoothstep-interpolated value noise; inputs in lattice units."""
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    n00 = _hash01(ix, iy, seed)
    n10 = _hash01(ix + 1, iy, seed)
    n01 = _hash01(ix, iy + 1, seed)
    n11 = _hash01(ix + 1, iy + 1, seed)
    top = n00 + (n10 - n00) * sx
    bot = n01 + (n11 - n01) * sx
    return top + (bot - top) * sy


def _face_texture(coords_a, coords_b, base_rgb, seed):
    n = value_noise(coords_a / _TEX_SPACING, coords_b / _TEX_SPACING, seed)
    factor = 1.0 - _TEX_AMP / 2.0 + _TEX_AMP * n
    return base_rgb[:, None] * factor[None, :]


def render_frame(spec: SceneSpec, frame_index: int) -> Frame:
    intr = spec.intrinsics
    h, w = intr.height, intr.width
    n = h * w
    cam = spec.cam_to_world[frame_index]
    r_wc = cam[:3, :3]
    origin = cam[:3, 3]
    dirs = r_wc @ pixel_grid(intr)          # (3,N), unnormalized: t == camera z

    with np.errstate(divide="ignore", invalid="ignore"):
        # Room interior: exit intersection along each axis.
        bounds = np.where(dirs > 0, spec.room[:, None], 0.0)
        t_axis = (bounds - origin[:, None]) / dirs
        t_axis[~np.isfinite(t_axis)] = np.inf
        room_axis = np.argmin(t_axis, axis=0)
        t_room = t_axis[room_axis, np.arange(n)]

        best_t = t_room.copy()
        best_obj = np.full(n, -1, dtype=np.int64)
        best_axis = room_axis.copy()
        for k, obj in enumerate(spec.objects):
            lo = (obj.lo[:, None] - origin[:, None]) / dirs
            hi = (obj.hi[:, None] - origin[:, None]) / dirs
            tn = np.minimum(lo, hi)
            tf = np.maximum(lo, hi)
            tn[~np.isfinite(tn)] = -np.inf
            tf[~np.isfinite(tf)] = np.inf
            enter_axis = np.argmax(tn, axis=0)
            t_enter = tn[enter_axis, np.arange(n)]
            t_exit = np.min(tf, axis=0)
            hit = (t_enter <= t_exit) & (t_enter > 1e-9) & (t_enter < best_t)
            best_t = np.where(hit, t_enter, best_t)
            best_obj = np.where(hit, k, best_obj)
            best_axis = np.where(hit, enter_axis, best_axis)

    depth = best_t
    points = origin[:, None] + dirs * depth[None, :]

    # Face normal toward the camera is -sign(dir_axis) on the hit axis
    # for both the room interior and object entry faces.
    sign = np.take_along_axis(dirs, best_axis[None, :], axis=0)[0]
    normal_sign = np.where(sign > 0, -1.0, 1.0)

    seg = np.zeros(n, dtype=np.uint8)
    room_mask = best_obj < 0
    floor_mask = room_mask & (best_axis == 2) & (normal_sign > 0)
    ceil_mask = room_mask & (best_axis == 2) & (normal_sign < 0)
    seg[room_mask] = 0
    seg[floor_mask] = 1
    seg[ceil_mask] = 2
    for k, obj in enumerate(spec.objects):
        seg[best_obj == k] = obj.class_id

    # Diffuse shading: constant per face (flat normals, fixed light).
    shade = np.empty(n)
    ndotl = normal_sign * spec.light_dir[best_axis]
    shade = AMBIENT + (1.0 - AMBIENT) * np.maximum(ndotl, 0.0)

    rgb = np.zeros((3, n))
    in_plane = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
    for axis in range(3):
        a, b = in_plane[axis]
        for sgn_hi in (0, 1):
            mask = room_mask & (best_axis == axis) & ((sign > 0) == bool(sgn_hi))
            if not np.any(mask):
                continue
            face_seed = spec.texture_seed + axis * 2 + sgn_hi
            if axis == 2:
                base = np.array(CLASS_ALBEDO[2 if sgn_hi else 1])
            else:
                base = np.array(CLASS_ALBEDO[0])
            rgb[:, mask] = _face_texture(points[a, mask], points[b, mask], base, face_seed)
    for k, obj in enumerate(spec.objects):
        for axis in range(3):
            a, b = in_plane[axis]
            mask = (best_obj == k) & (best_axis == axis)
            if not np.any(mask):
                continue
            face_seed = spec.texture_seed + 64 + obj.texture_phase * 8 + axis
            rgb[:, mask] = _face_texture(points[a, mask], points[b, mask], obj.albedo, face_seed)
    rgb *= shade[None, :]

    gt_depth = depth.reshape(h, w).astype(np.float32)
    gt_seg = seg.reshape(h, w)
    rgb_img = np.clip(rgb.reshape(3, h, w), 0.0, 1.0).astype(np.float32)

    r_cw = r_wc.T
    boxes = []
    counts = np.bincount(best_obj[best_obj >= 0], minlength=len(spec.objects)) \
        if spec.objects else np.zeros(0, dtype=np.int64)
    for k, obj in enumerate(spec.objects):
        if counts[k] < spec.config.min_visible_pixels:
            continue
        corners = np.array([[x, y, z]
                            for x in (obj.lo[0], obj.hi[0])
                            for y in (obj.lo[1], obj.hi[1])
                            for z in (obj.lo[2], obj.hi[2])])
        cam_pts = (corners - origin) @ r_cw.T
        lo, hi = cam_pts.min(axis=0), cam_pts.max(axis=0)
        boxes.append(Box3D((lo + hi) / 2, hi - lo, class_id=obj.class_id))

    sparse = sample_sparse_lidar(gt_depth, spec.config.lidar_grid)
    return Frame(rgb=rgb_img, sparse_depth=sparse, intrinsics=intr,
                 gt_depth=gt_depth, gt_seg=gt_seg, gt_boxes=boxes,
                 cam_to_world=cam.copy(), frame_id=frame_index,
                 scene_id=spec.seed)


def render_scene(spec: SceneSpec):
    frames = [render_frame(spec, i) for i in range(spec.cam_to_world.shape[0])]
    for t in range(len(frames) - 1):
        t_next_inv = np.linalg.inv(spec.cam_to_world[t + 1])
        rel = t_next_inv @ spec.cam_to_world[t]
        frames[t].gt_pose_to_next = RelativePose(rel[:3, :3], rel[:3, 3])
    return frames


def sample_sparse_lidar(gt_depth, grid):
    """Copy depth at a gw x gh lattice of cell centers, zero elsewhere."""
    gw, gh = grid
    h, w = gt_depth.shape
    if gw > w or gh > h:
        raise DataError(f"lidar grid {grid} exceeds image dims ({w}, {h})")
    us = np.floor((np.arange(gw) + 0.5) * w / gw).astype(np.int64)
    vs = np.floor((np.arange(gh) + 0.5) * h / gh).astype(np.int64)
    out = np.zeros_like(gt_depth)
    out[np.ix_(vs, us)] = gt_depth[np.ix_(vs, us)]
    return out


def teacher_labels(gt_seg, noise_rate, seed):
    """Privileged teacher: gt labels with exact-count corruption.

    round(noise_rate * N) pixels are flipped. Boundary pixels (those with
    a 4-neighbor of another class) are corrupted first by dilating the
    neighboring label over them; any remainder flips to a uniformly
    random other class. Every flip changes the label, so the measured
    flip fraction equals the requested rate to within 1/N.
    """
    if not (0.0 <= noise_rate < 0.5):
        raise ConfigError(f"teacher noise_rate must be in [0, 0.5), got {noise_rate}")
    gt_seg = np.asarray(gt_seg)
    out = gt_seg.copy()
    n_flip = int(round(noise_rate * gt_seg.size))
    if n_flip == 0:
        return out
    rng = np.random.default_rng(np.random.SeedSequence([7703, int(seed) & 0x7FFFFFFF]))

    # First differing 4-neighbor (up, left, down, right) per pixel.
    neighbor = np.full(gt_seg.shape, -1, dtype=np.int64)
    for dv, du in ((-1, 0), (0, -1), (1, 0), (0, 1)):
        shifted = np.full(gt_seg.shape, -1, dtype=np.int64)
        vs = slice(max(-dv, 0), gt_seg.shape[0] - max(dv, 0))
        us = slice(max(-du, 0), gt_seg.shape[1] - max(du, 0))
        vs_src = slice(max(dv, 0), gt_seg.shape[0] + min(dv, 0))
        us_src = slice(max(du, 0), gt_seg.shape[1] + min(du, 0))
        shifted[vs, us] = gt_seg[vs_src, us_src]
        pick = (neighbor < 0) & (shifted >= 0) & (shifted != gt_seg)
        neighbor[pick] = shifted[pick]

    flat_nb = neighbor.reshape(-1)
    boundary_idx = np.flatnonzero(flat_nb >= 0)
    n_boundary = min(n_flip, boundary_idx.size)
    chosen_b = rng.choice(boundary_idx, size=n_boundary, replace=False)
    flat_out = out.reshape(-1)
    flat_out[chosen_b] = flat_nb[chosen_b].astype(out.dtype)

    n_rest = n_flip - n_boundary
    if n_rest > 0:
        remaining = np.setdiff1d(np.arange(gt_seg.size), chosen_b, assume_unique=False)
        chosen_u = rng.choice(remaining, size=n_rest, replace=False)
        old = flat_out[chosen_u].astype(np.int64)
        bump = rng.integers(1, NUM_CLASSES, size=n_rest)
        flat_out[chosen_u] = ((old + bump) % NUM_CLASSES).astype(out.dtype)
    return out


def smooth_region_mask(frame, kink_tol=0.01):
    """Pixels away from shading/texture discontinuities.

    Excludes pixels on a segmentation boundary or where the depth map has
    a second-difference kink (face edges, room corners). Photometric
    interpolation-floor measurements are scoped to these smooth regions;
    boundary pixels mix two surfaces under bilinear sampling and are not
    informative about warp correctness.
    """
    seg = frame.gt_seg
    edge = np.zeros(seg.shape, dtype=bool)
    edge[1:] |= seg[1:] != seg[:-1]
    edge[:-1] |= seg[1:] != seg[:-1]
    edge[:, 1:] |= seg[:, 1:] != seg[:, :-1]
    edge[:, :-1] |= seg[:, 1:] != seg[:, :-1]
    d = frame.gt_depth.astype(np.float64)
    kink = np.zeros(seg.shape, dtype=bool)
    kink[:, 1:-1] |= np.abs(d[:, 2:] - 2 * d[:, 1:-1] + d[:, :-2]) > kink_tol
    kink[1:-1, :] |= np.abs(d[2:, :] - 2 * d[1:-1, :] + d[:-2, :]) > kink_tol
    grow = edge | kink
    out = grow.copy()
    out[1:] |= grow[:-1]
    out[:-1] |= grow[1:]
    out[:, 1:] |= grow[:, :-1]
    out[:, :-1] |= grow[:, 1:]
    return ~out


def covisibility_mask(frame_t, frame_next, tol=0.05, flat_tol=0.15):
    """Pixels of frame t whose surface point is also seen by the next frame.

    Uses ground-truth depth of both frames; an evaluation helper only
    (the training loss never sees it). A point is covisible when its
    depth in the neighbor camera matches the neighbor's depth map there;
    cells spanning a depth discontinuity (range > flat_tol) are dropped
    because interpolated depth is meaningless across an occlusion edge.
    """
    intr = frame_t.intrinsics
    pose = frame_t.gt_pose_to_next
    h, w = intr.height, intr.width
    dirs = pixel_grid(intr)
    pts = dirs * frame_t.gt_depth.reshape(1, -1).astype(np.float64)
    moved = pose.rotation @ pts + pose.translation[:, None]
    z = moved[2]
    zs = np.maximum(z, 1e-6)
    u = intr.fx * moved[0] / zs + intr.cx
    v = intr.fy * moved[1] / zs + intr.cy
    inside = (z > 0) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    x0 = np.minimum(np.floor(uc).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(vc).astype(np.int64), h - 2)
    wx = uc - x0
    wy = vc - y0
    dmap = frame_next.gt_depth.astype(np.float64)
    d00 = dmap[y0, x0]
    d01 = dmap[y0, x0 + 1]
    d10 = dmap[y0 + 1, x0]
    d11 = dmap[y0 + 1, x0 + 1]
    sampled = d00 * (1 - wx) * (1 - wy) + d01 * wx * (1 - wy) + d10 * (1 - wx) * wy + d11 * wx * wy
    # Depth-edge cells mix near and far surfaces when interpolated.
    flat_cell = np.maximum.reduce([d00, d01, d10, d11]) - np.minimum.reduce([d00, d01, d10, d11]) < flat_tol
    covis = inside & flat_cell & (np.abs(sampled - z) < tol)
    return covis.reshape(h, w)
