"""Voting-based 3D detection: cloud building, sampling primitives, the
semantic-fusion pathway, loss assignment, and box decoding."""

import numpy as np
import pytest

from roomsense.autodiff import Tensor, ops, reset_tape
from roomsense.errors import DataError
from roomsense.geometry import Box3D, backward_project_np
from roomsense.nets.detection import (CLUSTER_RADIUS, DetectionInternals,
                                      GROUP_K, GROUP_RADIUS, N_CLUSTERS,
                                      N_POINTS, N_SEEDS, NEG_RADIUS,
                                      NUM_OBJECT_CLASSES, OBJECT_CLASS_OFFSET,
                                      POS_RADIUS, PointBackbone, VoteHead,
                                      W_CENTER, W_CLASS, W_OBJ, W_SIZE, W_VOTE,
                                      ball_group, build_colored_cloud,
                                      decode_detections,
                                      farthest_point_indices, loss_detection,
                                      run_detection, sample_semantics)
from roomsense.synth import NUM_CLASSES, SynthConfig, generate_scene, render_scene


def _intr(w=32, h=24):
    from roomsense.geometry import CameraIntrinsics
    fx = w / (2.0 * np.tan(np.deg2rad(60.0) / 2.0))
    return CameraIntrinsics(fx, fx, (w - 1) / 2.0, (h - 1) / 2.0, w, h)


# ---------------------------------------------------------------------------
# cloud building

def test_cloud_matches_projection_and_colors():
    intr = _intr(16, 12)
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.5, 4.0, (12, 16)).astype(np.float32)
    depth[rng.random(depth.shape) < 0.3] = 0.0
    rgb = rng.random((3, 12, 16)).astype(np.float32)
    xyz, colors = build_colored_cloud(depth, rgb, intr, n_max=10_000)
    pts, idx, cols = backward_project_np(depth, intr, rgb=rgb)
    assert np.allclose(xyz, pts.astype(np.float32))
    assert np.allclose(colors, cols.astype(np.float32))


def test_cloud_subsample_deterministic_and_capped():
    intr = _intr(32, 24)
    rng = np.random.default_rng(1)
    depth = rng.uniform(0.5, 4.0, (24, 32)).astype(np.float32)
    rgb = rng.random((3, 24, 32)).astype(np.float32)
    a_xyz, a_col = build_colored_cloud(depth, rgb, intr, n_max=100)
    b_xyz, b_col = build_colored_cloud(depth, rgb, intr, n_max=100)
    assert a_xyz.shape == (100, 3)
    assert np.array_equal(a_xyz, b_xyz) and np.array_equal(a_col, b_col)


def test_cloud_empty_depth_raises():
    intr = _intr(16, 12)
    with pytest.raises(DataError):
        build_colored_cloud(np.zeros((12, 16), np.float32),
                            np.zeros((3, 12, 16), np.float32), intr)


# ---------------------------------------------------------------------------
# sampling primitives

def _fps_oracle(xyz, k, start=0):
    picked = [start]
    d = np.linalg.norm(xyz - xyz[start], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(d))
        picked.append(nxt)
        d = np.minimum(d, np.linalg.norm(xyz - xyz[nxt], axis=1))
    return np.array(picked)


def test_fps_matches_greedy_oracle():
    rng = np.random.default_rng(2)
    xyz = rng.normal(0, 1, (60, 3))
    got = farthest_point_indices(xyz, 12)
    assert np.array_equal(got, _fps_oracle(xyz, 12))
    assert len(set(got.tolist())) == 12


def test_fps_finds_separated_corners():
    """A cube's 8 corners plus a dense blob: the first picks must cover
    every corner before revisiting the blob."""
    rng = np.random.default_rng(3)
    corners = np.array([[x, y, z] for x in (0, 9) for y in (0, 9) for z in (0, 9)],
                       dtype=np.float64)
    blob = rng.normal(4.5, 0.05, (50, 3))
    xyz = np.vstack([blob, corners])
    picked = farthest_point_indices(xyz, 9)
    corner_ids = set(range(50, 58))
    assert corner_ids <= set(picked.tolist())


def test_fps_small_input_returns_everything():
    xyz = np.random.default_rng(4).normal(0, 1, (5, 3))
    assert np.array_equal(farthest_point_indices(xyz, 8), np.arange(5))
    with pytest.raises(DataError):
        farthest_point_indices(np.zeros((0, 3)), 4)


def _ball_oracle(xyz, center_idx, radius, k):
    rows = []
    for c in center_idx:
        inr = [i for i in range(len(xyz))
               if np.sum((xyz[i] - xyz[c]) ** 2) <= radius * radius]
        row = inr[:k]
        row += [c] * (k - len(row))
        rows.append(row)
    return np.array(rows, dtype=np.int64)


def test_ball_group_matches_brute_force():
    rng = np.random.default_rng(5)
    xyz = rng.normal(0, 0.6, (80, 3))
    centers = np.array([0, 17, 42, 79])
    got = ball_group(xyz, centers, 0.5, 6)
    assert np.array_equal(got, _ball_oracle(xyz, centers, 0.5, 6))
    # all members genuinely within the radius
    for row, c in zip(got, centers):
        d = np.linalg.norm(xyz[row] - xyz[c], axis=1)
        assert (d <= 0.5 + 1e-12).all()


def test_point_backbone_member_order_invariance():
    """Max-pooled set features ignore the order of group members."""
    rng = np.random.default_rng(6)
    xyz = rng.normal(0, 1, (40, 3)).astype(np.float32)
    colors = rng.random((40, 3)).astype(np.float32)
    seed_idx = np.array([3, 11])
    group = ball_group(xyz, seed_idx, 2.0, 8)
    net = PointBackbone(np.random.default_rng(7))
    a = net(xyz, colors, seed_idx, group).data
    perm = group[:, np.random.default_rng(8).permutation(8)]
    b = net(xyz, colors, seed_idx, perm).data
    reset_tape()
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# semantic fusion

def test_sample_semantics_exact_at_pixel_centers():
    intr = _intr(16, 12)
    rng = np.random.default_rng(9)
    probs = rng.random((NUM_CLASSES, 12, 16)).astype(np.float32)
    # a point that projects exactly onto pixel (u=5, v=7) at depth 2
    z = 2.0
    x = (5 - intr.cx) / intr.fx * z
    y = (7 - intr.cy) / intr.fy * z
    out = sample_semantics(np.array([[x, y, z]]), probs, intr)
    assert np.allclose(out[0], probs[:, 7, 5], atol=1e-6)


def test_sample_semantics_invalid_points_zero():
    intr = _intr(16, 12)
    probs = np.full((NUM_CLASSES, 12, 16), 1.0 / NUM_CLASSES, dtype=np.float32)
    pts = np.array([[0.0, 0.0, -1.0],      # behind camera
                    [100.0, 0.0, 1.0],     # far outside the frustum
                    [0.0, 0.0, 2.0]])      # valid
    out = sample_semantics(pts, probs, intr)
    assert np.array_equal(out[0], np.zeros(NUM_CLASSES))
    assert np.array_equal(out[1], np.zeros(NUM_CLASSES))
    assert np.allclose(out[2], 1.0 / NUM_CLASSES, atol=1e-6)


def test_sample_semantics_preserves_simplex():
    """Bilinear mixing of softmax maps keeps rows on the simplex."""
    intr = _intr(16, 12)
    rng = np.random.default_rng(10)
    logits = rng.standard_normal((NUM_CLASSES, 12, 16))
    e = np.exp(logits - logits.max(axis=0))
    probs = (e / e.sum(axis=0)).astype(np.float32)
    pts = np.column_stack([rng.uniform(-0.5, 0.5, 30), rng.uniform(-0.4, 0.4, 30),
                           rng.uniform(1.0, 4.0, 30)])
    out = sample_semantics(pts, probs, intr)
    valid = out.sum(axis=1) > 0
    assert valid.sum() > 10
    assert np.allclose(out[valid].sum(axis=1), 1.0, atol=1e-5)


def test_vote_head_fusion_changes_input_width():
    a = VoteHead(np.random.default_rng(0), use_semantics=True)
    b = VoteHead(np.random.default_rng(0), use_semantics=False)
    assert a.vote_fc1.w.shape[0] == b.vote_fc1.w.shape[0] + NUM_CLASSES
    seeds = np.zeros((N_SEEDS, 3), dtype=np.float32)
    feats = Tensor(np.zeros((N_SEEDS, 64), dtype=np.float32))
    with pytest.raises(DataError):
        a(seeds, feats, None)
    reset_tape()


def test_oracle_votes_collapse_to_object_center():
    """Seeds on a box surface with perfect votes: every cluster position
    is exactly the object center."""
    rng = np.random.default_rng(11)
    center = np.array([0.5, -0.2, 2.5])
    size = np.array([0.8, 0.6, 0.9])
    face = rng.integers(0, 3, 64)
    side = rng.choice([-0.5, 0.5], 64)
    seeds = center + rng.uniform(-0.5, 0.5, (64, 3)) * size
    seeds[np.arange(64), face] = center[face] + side * size[face]
    votes = np.tile(center, (64, 1))
    cluster_idx = farthest_point_indices(votes, N_CLUSTERS)
    assert np.array_equal(votes[cluster_idx],
                          np.tile(center, (len(cluster_idx), 1)))
    group = ball_group(votes, cluster_idx, CLUSTER_RADIUS, 8)
    assert (np.linalg.norm(votes[group] - center, axis=2) == 0).all()


# ---------------------------------------------------------------------------
# loss assignment

def _internals(cluster_xyz, obj_logits, center, size, class_logits,
               seed_xyz=None, vote_xyz=None):
    m = 4 if seed_xyz is None else len(seed_xyz)
    seed_xyz = np.zeros((m, 3)) if seed_xyz is None else np.asarray(seed_xyz, dtype=np.float64)
    votes = seed_xyz if vote_xyz is None else np.asarray(vote_xyz, dtype=np.float64)
    return DetectionInternals(
        seed_xyz=seed_xyz.astype(np.float32),
        vote_xyz=Tensor(votes.astype(np.float32), requires_grad=True),
        cluster_xyz_np=np.asarray(cluster_xyz, dtype=np.float64),
        obj_logits=Tensor(np.asarray(obj_logits, dtype=np.float32), requires_grad=True),
        center=Tensor(np.asarray(center, dtype=np.float32), requires_grad=True),
        size=Tensor(np.asarray(size, dtype=np.float32), requires_grad=True),
        class_logits=Tensor(np.asarray(class_logits, dtype=np.float32), requires_grad=True),
    )


def _ce(logits, label):
    z = logits - logits.max()
    return float(-(z[label] - np.log(np.exp(z).sum())))


def test_loss_hand_computed_assignment():
    """One positive, one ignored, one negative cluster; seeds half on the
    object; every term checked against a by-hand computation."""
    gt_center = np.array([0.0, 0.0, 2.0])
    gt_size = np.array([0.6, 0.6, 0.6])
    gt = [[3 + 1, *gt_center, *gt_size]]     # class id 4 -> local 1

    seed_xyz = np.array([[0.1, 0.1, 2.1],    # inside the box
                         [0.2, -0.1, 1.9],   # inside
                         [2.0, 2.0, 4.0],    # far away
                         [-2.0, 1.0, 5.0]])  # far away
    vote_xyz = seed_xyz + 0.05
    cluster_xyz = np.array([[0.1, 0.0, 2.05],    # 0.112 m -> positive
                            [0.0, 0.45, 2.0],    # 0.45 m -> ignored
                            [3.0, 0.0, 2.0]])    # 3 m -> negative
    obj_logits = np.array([[0.2, 0.9], [1.0, 1.0], [1.5, -0.5]])
    center = cluster_xyz + np.array([0.02, -0.03, 0.01])
    size = np.array([[0.5, 0.7, 0.55], [1, 1, 1], [1, 1, 1]])
    class_logits = np.array([[0.3, 1.2, -0.5, 0.0, 0.4],
                             [0.0] * 5, [0.0] * 5])

    internals = _internals(cluster_xyz, obj_logits, center, size, class_logits,
                           seed_xyz=seed_xyz, vote_xyz=vote_xyz)
    total, parts = loss_detection(internals, gt)
    reset_tape()

    # vote: only the two on-object seeds, L1 to the box center
    expect_vote = np.abs(vote_xyz[:2] - gt_center).sum() / 6.0
    assert np.isclose(parts["l_vote"], expect_vote, rtol=1e-5)

    # objectness: positive and negative rows only, mean over weight 2
    expect_obj = (_ce(obj_logits[0], 1) + _ce(obj_logits[2], 0)) / 2.0
    assert np.isclose(parts["l_obj"], expect_obj, rtol=1e-5)

    # center/size: only the positive cluster, against the nearest gt
    expect_center = np.abs(center[0] - gt_center).sum() / 3.0
    expect_size = np.abs(size[0] - gt_size).sum() / 3.0
    assert np.isclose(parts["l_center"], expect_center, rtol=1e-4)
    assert np.isclose(parts["l_size"], expect_size, rtol=1e-4)

    # class: positive cluster, local label 1
    expect_class = _ce(class_logits[0], 1)
    assert np.isclose(parts["l_class"], expect_class, rtol=1e-5)

    expect_total = (W_VOTE * expect_vote + W_OBJ * expect_obj
                    + W_CENTER * expect_center + W_SIZE * expect_size
                    + W_CLASS * expect_class)
    assert np.isclose(float(total.data), expect_total, rtol=1e-4)
    assert parts["n_pos"] == 1


def test_loss_off_object_seeds_contribute_nothing():
    """Moving a far-away seed's vote must not change the vote term."""
    gt = [[3, 0.0, 0.0, 2.0, 0.5, 0.5, 0.5]]
    seed_xyz = np.array([[0.0, 0.0, 2.0], [5.0, 5.0, 5.0]])
    for far_vote in ([5.0, 5.0, 5.0], [9.0, -9.0, 1.0]):
        internals = _internals(
            cluster_xyz=[[0.0, 0.0, 2.0]], obj_logits=[[0.0, 0.0]],
            center=[[0.0, 0.0, 2.0]], size=[[0.5, 0.5, 0.5]],
            class_logits=[[0.0] * 5],
            seed_xyz=seed_xyz, vote_xyz=[[0.1, 0.0, 2.0], far_vote])
        total, parts = loss_detection(internals, gt)
        reset_tape()
        assert np.isclose(parts["l_vote"], 0.1 / 3.0, rtol=1e-5)


def test_loss_empty_scene_only_negative_objectness():
    internals = _internals(cluster_xyz=np.zeros((3, 3)),
                           obj_logits=[[2.0, -1.0]] * 3,
                           center=np.zeros((3, 3)), size=np.ones((3, 3)),
                           class_logits=np.zeros((3, 5)))
    total, parts = loss_detection(internals, [])
    reset_tape()
    assert parts["l_vote"] == 0.0 and parts["l_center"] == 0.0
    assert np.isclose(float(total.data), W_OBJ * parts["l_obj"], rtol=1e-6)
    assert np.isclose(parts["l_obj"], _ce(np.array([2.0, -1.0]), 0), rtol=1e-5)


def test_loss_rejects_bad_class_id():
    internals = _internals(cluster_xyz=[[0.0, 0.0, 2.0]], obj_logits=[[0.0, 0.0]],
                           center=[[0.0, 0.0, 2.0]], size=[[1, 1, 1]],
                           class_logits=[[0.0] * 5])
    with pytest.raises(DataError):
        loss_detection(internals, [[1, 0.0, 0.0, 2.0, 1.0, 1.0, 1.0]])
    reset_tape()


# ---------------------------------------------------------------------------
# decoding

def test_decode_threshold_nms_and_ordering():
    internals = _internals(
        cluster_xyz=np.zeros((4, 3)),
        obj_logits=[[0.0, 2.0],       # p ~ 0.88, kept
                    [0.0, 1.0],       # p ~ 0.73, same class, overlaps -> NMS'd
                    [0.0, 0.5],       # p ~ 0.62, other class
                    [9.0, 0.0]],      # p ~ 1e-4, below threshold
        center=[[0, 0, 2], [0.05, 0, 2], [5, 5, 5], [1, 1, 1]],
        size=[[1, 1, 1], [1, 1, 1], [0.5, 0.5, 0.5], [1, 1, 1]],
        class_logits=[[9, 0, 0, 0, 0], [9, 0, 0, 0, 0],
                      [0, 9, 0, 0, 0], [0, 0, 9, 0, 0]])
    kept = decode_detections(internals, obj_threshold=0.05, nms_iou=0.25)
    reset_tape()
    assert len(kept) == 2
    assert kept[0].score > kept[1].score
    assert kept[0].class_id == OBJECT_CLASS_OFFSET
    assert kept[1].class_id == OBJECT_CLASS_OFFSET + 1
    assert all(isinstance(b, Box3D) for b in kept)


def test_run_detection_shapes_on_rendered_frame():
    cfg = SynthConfig(width=32, height=32, lidar_grid=(8, 8), frames_per_scene=2)
    f = render_scene(generate_scene(12, cfg))[0]
    probs = np.full((NUM_CLASSES, 32, 32), 1.0 / NUM_CLASSES, dtype=np.float32)
    pb = PointBackbone(np.random.default_rng(1))
    vh = VoteHead(np.random.default_rng(2), use_semantics=True)
    internals = run_detection(pb, vh, f.gt_depth, f.rgb, probs, f.intrinsics)
    reset_tape()
    assert internals.seed_xyz.shape == (N_SEEDS, 3)
    assert internals.vote_xyz.shape == (N_SEEDS, 3)
    assert internals.cluster_xyz_np.shape == (N_CLUSTERS, 3)
    assert internals.obj_logits.shape == (N_CLUSTERS, 2)
    assert internals.center.shape == (N_CLUSTERS, 3)
    assert (internals.size.data > 0).all()
    assert internals.class_logits.shape == (N_CLUSTERS, NUM_OBJECT_CLASSES)
