"""Scene generator and renderer: geometric ground truth, teacher labels,
lidar lattice, trajectories, and the stick-figure pose data."""

import numpy as np
import pytest

from roomsense.errors import ConfigError, DataError
from roomsense.synth import (Frame, NUM_CLASSES, NUM_KEYPOINTS, SynthConfig,
                             covisibility_mask, generate_pose_sample,
                             generate_scene, make_empty_room_pair_spec,
                             render_frame, render_scene, sample_sparse_lidar,
                             smooth_region_mask, teacher_labels)
from roomsense.synth.scenes import (MAX_STEP_R, MAX_STEP_T,
                                    OBJECT_CLASS_OFFSET, _WALL_MARGIN)


def _small():
    return SynthConfig(width=32, height=24, lidar_grid=(8, 6), frames_per_scene=3)


def _frames(seed=0, config=None):
    return render_scene(generate_scene(seed, config or _small()))


# ---------------------------------------------------------------------------
# rendered frame contracts

def test_frame_shapes_and_ranges():
    cfg = _small()
    for f in _frames(1, cfg):
        assert f.rgb.shape == (3, cfg.height, cfg.width)
        assert f.rgb.dtype == np.float32
        assert f.rgb.min() >= 0.0 and f.rgb.max() <= 1.0
        assert f.gt_depth.shape == (cfg.height, cfg.width)
        assert (f.gt_depth > 0).all(), "closed room: every ray hits something"
        assert f.gt_seg.dtype == np.uint8
        assert f.gt_seg.max() < NUM_CLASSES
        assert f.sparse_depth.shape == f.gt_depth.shape


def test_depth_is_z_not_ray_length():
    """Empty-room depth equals the per-pixel ray-box z oracle, and differs
    from euclidean ray length away from the optical axis."""
    cfg = _small()
    spec = make_empty_room_pair_spec(5, cfg)
    f = render_frame(spec, 0)
    intr = spec.intrinsics
    cam = spec.cam_to_world[0]
    r_wc, origin = cam[:3, :3], cam[:3, 3]
    ray_len_differs = 0
    for vv in range(0, intr.height, 3):
        for uu in range(0, intr.width, 3):
            d_cam = np.array([(uu - intr.cx) / intr.fx,
                              (vv - intr.cy) / intr.fy, 1.0])
            d_world = r_wc @ d_cam
            t_best = np.inf
            for axis in range(3):
                if d_world[axis] > 0:
                    t = (spec.room[axis] - origin[axis]) / d_world[axis]
                elif d_world[axis] < 0:
                    t = (0.0 - origin[axis]) / d_world[axis]
                else:
                    continue
                t_best = min(t_best, t)
            assert np.isclose(f.gt_depth[vv, uu], t_best, atol=1e-5), \
                f"pixel ({uu},{vv}): depth {f.gt_depth[vv, uu]} vs oracle {t_best}"
            if abs(t_best * np.linalg.norm(d_cam) - t_best) > 0.01:
                ray_len_differs += 1
    assert ray_len_differs > 10, "test would not distinguish z from ray length"


def test_surface_points_lie_on_scene_geometry():
    """Lifting gt depth into world space lands on the room shell or on an
    object face, and the segmentation class matches the surface."""
    cfg = _small()
    spec = generate_scene(3, cfg)
    f = render_frame(spec, 0)
    intr = spec.intrinsics
    cam = spec.cam_to_world[0]
    r_wc, origin = cam[:3, :3], cam[:3, 3]
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    dirs = np.stack([(u.ravel() - intr.cx) / intr.fx,
                     (v.ravel() - intr.cy) / intr.fy,
                     np.ones(u.size)])
    pts = origin[:, None] + (r_wc @ dirs) * f.gt_depth.reshape(1, -1).astype(np.float64)
    seg = f.gt_seg.reshape(-1)
    for i in range(0, pts.shape[1], 7):
        p, c = pts[:, i], seg[i]
        on_shell = [abs(p[a]) < 1e-4 or abs(p[a] - spec.room[a]) < 1e-4 for a in range(3)]
        if c == 1:
            assert abs(p[2]) < 1e-4, "floor pixels sit at z=0"
        elif c == 2:
            assert abs(p[2] - spec.room[2]) < 1e-4, "ceiling pixels at z=room"
        elif c == 0:
            assert on_shell[0] or on_shell[1], "wall pixels on an x or y face"
        else:
            hits = [o for o in spec.objects if o.class_id == c
                    and (p >= o.lo - 1e-4).all() and (p <= o.hi + 1e-4).all()
                    and np.min(np.minimum(p - o.lo, o.hi - p)) < 1e-4]
            assert hits, f"object pixel {i} class {c} not on any object face"


def test_gt_boxes_classes_and_visibility():
    cfg = _small()
    for f in _frames(9, cfg):
        class_counts = np.bincount(f.gt_seg.reshape(-1), minlength=NUM_CLASSES)
        for b in f.gt_boxes:
            assert OBJECT_CLASS_OFFSET <= b.class_id < NUM_CLASSES
            assert b.score == 1.0
            assert class_counts[b.class_id] >= cfg.min_visible_pixels


def test_sparse_lidar_exact_lattice():
    rng = np.random.default_rng(2)
    depth = rng.uniform(0.5, 6.0, (24, 32)).astype(np.float32)
    out = sample_sparse_lidar(depth, (8, 6))
    nz = np.nonzero(out)
    assert len(nz[0]) == 8 * 6
    assert np.array_equal(out[nz], depth[nz])
    assert set(np.unique(nz[1])) == {int(np.floor((i + 0.5) * 32 / 8)) for i in range(8)}
    assert set(np.unique(nz[0])) == {int(np.floor((j + 0.5) * 24 / 6)) for j in range(6)}
    with pytest.raises(DataError):
        sample_sparse_lidar(depth, (64, 6))


def test_pose_chain_matches_camera_matrices():
    cfg = _small()
    spec = generate_scene(4, cfg)
    frames = render_scene(spec)
    assert frames[-1].gt_pose_to_next is None
    for t in range(len(frames) - 1):
        rel = np.linalg.inv(spec.cam_to_world[t + 1]) @ spec.cam_to_world[t]
        pose = frames[t].gt_pose_to_next
        assert np.allclose(pose.rotation, rel[:3, :3], atol=1e-9)
        assert np.allclose(pose.translation, rel[:3, 3], atol=1e-9)
        # and it maps frame-t camera-space points into frame t+1
        p_world = spec.cam_to_world[t] @ np.array([0.3, -0.2, 2.0, 1.0])
        p_next = np.linalg.inv(spec.cam_to_world[t + 1]) @ p_world
        got = pose.apply(np.array([[0.3, -0.2, 2.0]]))
        assert np.allclose(got[0], p_next[:3], atol=1e-9)


def test_trajectory_stays_in_room_with_small_steps():
    for seed in range(6):
        spec = generate_scene(seed, _small())
        pos = spec.cam_to_world[:, :3, 3]
        assert (pos >= _WALL_MARGIN - 1e-9).all()
        assert (pos <= spec.room[None] - _WALL_MARGIN + 1e-9).all()
        for t in range(len(pos) - 1):
            assert np.linalg.norm(pos[t + 1] - pos[t]) <= MAX_STEP_T + 1e-9
            dr = spec.cam_to_world[t + 1, :3, :3].T @ spec.cam_to_world[t, :3, :3]
            ang = np.arccos(np.clip((np.trace(dr) - 1) / 2, -1, 1))
            assert ang <= MAX_STEP_R + 1e-6


def test_scene_render_deterministic():
    a = _frames(11)
    b = _frames(11)
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.rgb, fb.rgb)
        assert np.array_equal(fa.gt_depth, fb.gt_depth)
        assert np.array_equal(fa.gt_seg, fb.gt_seg)


def test_covisibility_high_in_convex_room():
    cfg = _small()
    frames = render_scene(make_empty_room_pair_spec(7, cfg))
    mask = covisibility_mask(frames[0], frames[1])
    assert mask.dtype == bool
    assert mask.mean() > 0.5, f"convex room should be mostly covisible, got {mask.mean()}"


def test_smooth_region_mask_flags_depth_kinks():
    cfg = _small()
    intr = cfg.intrinsics()
    depth = np.full((cfg.height, cfg.width), 3.0, dtype=np.float32)
    seg = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
    f = Frame(rgb=np.zeros((3, cfg.height, cfg.width), np.float32),
              sparse_depth=depth, intrinsics=intr, gt_depth=depth,
              gt_seg=seg, gt_boxes=[], cam_to_world=np.eye(4))
    assert smooth_region_mask(f).all(), "flat depth + uniform labels = all smooth"
    depth2 = depth.copy()
    depth2[10, 16] = 4.0
    f2 = Frame(rgb=f.rgb, sparse_depth=depth2, intrinsics=intr, gt_depth=depth2,
               gt_seg=seg, gt_boxes=[], cam_to_world=np.eye(4))
    m = smooth_region_mask(f2)
    assert not m[10, 16] and not m[10, 15] and not m[10, 17]
    assert m[0, 0], "far corner unaffected"


# ---------------------------------------------------------------------------
# teacher labels

def test_teacher_flip_count_exact():
    gt = _frames(13)[0].gt_seg
    for rate in (0.05, 0.1, 0.25):
        noisy = teacher_labels(gt, rate, seed=3)
        flips = noisy != gt
        assert flips.sum() == round(rate * gt.size)
        assert (noisy[flips] != gt[flips]).all()
        assert noisy.dtype == gt.dtype


def test_teacher_flips_boundary_first_with_neighbor_label():
    gt = _frames(14)[0].gt_seg
    noisy = teacher_labels(gt, 0.02, seed=5)
    flipped = np.argwhere(noisy != gt)
    assert len(flipped) > 0
    h, w = gt.shape
    for vv, uu in flipped:
        neighbor = None
        for dv, du in ((-1, 0), (0, -1), (1, 0), (0, 1)):
            nv, nu = vv + dv, uu + du
            if 0 <= nv < h and 0 <= nu < w and gt[nv, nu] != gt[vv, uu]:
                neighbor = gt[nv, nu]
                break
        assert neighbor is not None, "low-rate corruption must stay on boundaries"
        assert noisy[vv, uu] == neighbor, "dilates the first differing neighbor"


def test_teacher_zero_rate_and_errors():
    gt = _frames(15)[0].gt_seg
    assert np.array_equal(teacher_labels(gt, 0.0, seed=1), gt)
    with pytest.raises(ConfigError):
        teacher_labels(gt, 0.5, seed=1)
    with pytest.raises(ConfigError):
        teacher_labels(gt, -0.1, seed=1)
    a = teacher_labels(gt, 0.1, seed=8)
    assert np.array_equal(a, teacher_labels(gt, 0.1, seed=8))
    assert not np.array_equal(a, teacher_labels(gt, 0.1, seed=9))


# ---------------------------------------------------------------------------
# pose samples

def test_pose_sample_contracts():
    cfg = _small()
    saw_invisible = False
    for seed in range(40):
        s = generate_pose_sample(seed, cfg)
        p = s.keypoints.shape[0]
        assert cfg.persons_min <= p <= cfg.persons_max
        assert s.keypoints.shape == (p, NUM_KEYPOINTS, 3)
        assert s.rgb.dtype == np.float32
        assert s.rgb.min() >= 0.0 and s.rgb.max() <= 1.0
        vis = s.keypoints[:, :, 2] > 0
        xs, ys = s.keypoints[:, :, 0][vis], s.keypoints[:, :, 1][vis]
        assert (xs >= 0).all() and (xs <= cfg.width - 1).all()
        assert (ys >= 0).all() and (ys <= cfg.height - 1).all()
        assert np.allclose(s.centers, s.keypoints[:, :, :2].mean(axis=1), atol=1e-5)
        saw_invisible |= bool((~vis).any())
    assert saw_invisible, "occlusion/out-of-frame should occur somewhere in 40 draws"


def test_pose_sample_deterministic():
    a = generate_pose_sample(21, _small())
    b = generate_pose_sample(21, _small())
    assert np.array_equal(a.rgb, b.rgb)
    assert np.array_equal(a.keypoints, b.keypoints)
