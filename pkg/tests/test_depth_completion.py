"""Depth decoder range guarantees, egomotion identity init, and the
sparse + photometric loss contract."""

import numpy as np
import pytest

from roomsense.autodiff import Tensor, backward, no_grad, ops, reset_tape
from roomsense.errors import ShapeError
from roomsense.geometry import axis_angle_to_matrix_np, inverse_warp
from roomsense.nets.backbone import BackboneRGB, BackboneSparseDepth, sparse_depth_input
from roomsense.nets.depth_completion import (D_MAX, D_MIN, DepthHead,
                                             EgomotionNet, TRANSLATION_SCALE,
                                             loss_depth_completion,
                                             warp_from_prediction)
from roomsense.synth import SynthConfig, generate_scene, render_scene


def _pyramids(seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    rgb = rng.random((1, 3, 48, 64)).astype(np.float32)
    d = rng.uniform(0.5, 5.0, (48, 64)).astype(np.float32)
    d[rng.random(d.shape) < 0.9] = 0.0
    bb = BackboneRGB(np.random.default_rng(100))
    sp = BackboneSparseDepth(np.random.default_rng(101))
    return bb(Tensor(rgb * scale)), sp(Tensor(sparse_depth_input(d)[None]))


def test_depth_range_pinned_for_any_weights():
    """The sigmoid reparameterization keeps depth in [D_MIN, D_MAX]
    regardless of the decoder weights."""
    rgb_pyr, sp_pyr = _pyramids(1)
    for wseed in range(3):
        head = DepthHead(np.random.default_rng(wseed))
        for _, p in head.named_parameters():
            p.data[:] = 50.0 * np.random.default_rng(wseed + 7).standard_normal(p.shape)
        with no_grad():
            depth = head(rgb_pyr, sp_pyr)
        assert depth.shape == (1, 48, 64)
        assert (depth.data >= D_MIN - 1e-6).all()
        assert (depth.data <= D_MAX + 1e-6).all()


def test_depth_head_rejects_mismatched_pyramids():
    rgb_pyr, sp_pyr = _pyramids(2)
    head = DepthHead(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        head(rgb_pyr, list(reversed(sp_pyr)))


def test_egomotion_identity_at_init():
    """Zero-initialized head: axis-angle and translation are exactly zero,
    so the induced warp is the identity transform."""
    net = EgomotionNet(np.random.default_rng(3))
    rgb_pyr, sp_pyr = _pyramids(3)
    aa, t = net((rgb_pyr, sp_pyr), (rgb_pyr, sp_pyr))
    assert np.array_equal(aa.data, np.zeros_like(aa.data))
    assert np.array_equal(t.data, np.zeros_like(t.data))
    rot = axis_angle_to_matrix_np(aa.data[0])
    assert np.allclose(rot, np.eye(3), atol=1e-6)


def test_egomotion_translation_scale():
    net = EgomotionNet(np.random.default_rng(4))
    net.head.w.data[:] = np.random.default_rng(5).standard_normal(
        net.head.w.shape).astype(np.float32)
    rgb_pyr, sp_pyr = _pyramids(4)
    aa, t = net((rgb_pyr, sp_pyr), (rgb_pyr, sp_pyr))
    raw = net.head(ops.mean(net.mix(ops.relu(net.reduce(
        ops.concat([rgb_pyr[2], sp_pyr[2], rgb_pyr[2], sp_pyr[2]], axis=1)))),
        axis=(2, 3)))
    assert np.allclose(t.data, raw.data[:, 3:6] * TRANSLATION_SCALE, atol=1e-7)
    assert np.allclose(aa.data, raw.data[:, 0:3], atol=1e-7)


def test_loss_terms_and_zero_valid_warnings():
    rng = np.random.default_rng(6)
    h, w = 12, 16
    pred = Tensor(rng.uniform(1.0, 3.0, (h, w)).astype(np.float32), requires_grad=True)
    sparse = np.zeros((h, w), dtype=np.float32)
    sparse[3, 4] = 2.0
    sparse[9, 11] = 1.5
    ref = rng.random((3, h, w)).astype(np.float32)
    warped = Tensor(rng.random((3, h, w)).astype(np.float32))
    mask = np.ones((h, w), dtype=bool)

    total, parts = loss_depth_completion(pred, sparse, [(warped, mask)], ref)
    expect_sparse = (abs(pred.data[3, 4] - 2.0) + abs(pred.data[9, 11] - 1.5)) / 2
    assert np.isclose(parts["l_sparse"], expect_sparse, rtol=1e-5)
    expect_photo = np.abs(warped.data - ref).mean()
    assert np.isclose(parts["l_photo"], expect_photo, rtol=1e-5)
    assert np.isclose(float(total.data), expect_sparse + expect_photo, rtol=1e-5)
    assert parts["warnings"] == []
    reset_tape()

    # all-invalid lidar and mask produce zero terms plus warnings
    total, parts = loss_depth_completion(pred, np.zeros((h, w), np.float32),
                                         [(warped, np.zeros((h, w), bool))], ref)
    assert float(total.data) == 0.0
    assert "sparse term has zero valid pixels" in parts["warnings"]
    assert "photometric term has zero valid pixels" in parts["warnings"]
    reset_tape()

    total, parts = loss_depth_completion(pred, sparse, [], ref)
    assert "no photometric neighbors" in parts["warnings"]
    reset_tape()


def test_photometric_gradient_reaches_depth():
    """The warp ties the photometric error back to the depth map."""
    cfg = SynthConfig(width=32, height=16, lidar_grid=(8, 4), frames_per_scene=2)
    frames = render_scene(generate_scene(5, cfg))
    f0, f1 = frames[0], frames[1]
    depth = Tensor(np.full((16, 32), 2.0, dtype=np.float64), requires_grad=True)
    pose = f0.gt_pose_to_next
    warped, mask = inverse_warp(Tensor(f1.rgb.astype(np.float64)), depth,
                                pose.rotation, pose.translation, f0.intrinsics)
    total, _ = loss_depth_completion(depth, np.zeros((16, 32), np.float32),
                                     [(warped, mask)], f0.rgb)
    backward(total)
    reset_tape()
    assert depth.grad is not None
    assert np.count_nonzero(depth.grad) > 50


def test_gt_depth_never_consumed():
    """The loss signature takes only sparse lidar and images; feeding the
    dense gt map through the sparse argument is the only way in, and the
    sparse term then touches every pixel (which the trainer never does).
    This is a contract note: the loss has no gt_depth parameter."""
    import inspect
    params = inspect.signature(loss_depth_completion).parameters
    assert "gt_depth" not in params
    assert list(params) == ["pred_depth", "sparse_depth", "warped_and_masks", "ref_rgb"]


def test_warp_from_prediction_matches_inverse_warp():
    rng = np.random.default_rng(9)
    cfg = SynthConfig(width=32, height=16, lidar_grid=(8, 4), frames_per_scene=2)
    frames = render_scene(generate_scene(6, cfg))
    f0, f1 = frames[0], frames[1]
    aa = Tensor(rng.normal(0, 0.02, (1, 3)))
    tr = Tensor(rng.normal(0, 0.05, (1, 3)))
    depth = Tensor(f0.gt_depth.astype(np.float64))
    w1, m1 = warp_from_prediction(Tensor(f1.rgb.astype(np.float64)), depth,
                                  ops.reshape(aa, (3,)), ops.reshape(tr, (3,)),
                                  f0.intrinsics)
    rot = axis_angle_to_matrix_np(aa.data.reshape(3))
    w2, m2 = inverse_warp(Tensor(f1.rgb.astype(np.float64)), depth,
                          rot, tr.data.reshape(3), f0.intrinsics)
    assert np.array_equal(m1, m2)
    assert np.allclose(w1.data, w2.data, atol=1e-9)
