"""Shared backbones and BiFPN neck: shapes, budgets, fusion weights,
mask-pathway behavior."""

import numpy as np
import pytest

from roomsense.autodiff import Tensor, backward, ops, reset_tape
from roomsense.errors import ShapeError
from roomsense.nets.backbone import (BackboneRGB, BackboneSparseDepth,
                                     BiFPNLayer, FusionNode, NECK_CHANNELS,
                                     NeckRGB, sparse_depth_input)
from roomsense.nets.model import MultiTaskModel


def _rng():
    return np.random.default_rng(0)


def test_shared_trunk_parameter_budget():
    rng = _rng()
    n = (BackboneRGB(rng).num_parameters()
         + BackboneSparseDepth(rng).num_parameters()
         + NeckRGB(rng).num_parameters())
    assert n < 200_000, f"shared trunk has {n} params"


def test_rgb_pyramid_shapes():
    rng = _rng()
    bb = BackboneRGB(rng)
    x = Tensor(_rng().random((2, 3, 48, 64)).astype(np.float32))
    p2, p3, p4 = bb(x)
    assert p2.shape == (2, 32, 12, 16)
    assert p3.shape == (2, 48, 6, 8)
    assert p4.shape == (2, 64, 3, 4)


def test_backbone_rejects_bad_dims():
    bb = BackboneRGB(_rng())
    with pytest.raises(ShapeError):
        bb(Tensor(np.zeros((2, 3, 50, 64), dtype=np.float32)))
    with pytest.raises(ShapeError):
        bb(Tensor(np.zeros((3, 48, 64), dtype=np.float32)))
    sp = BackboneSparseDepth(_rng())
    with pytest.raises(ShapeError):
        sp(Tensor(np.zeros((1, 3, 48, 64), dtype=np.float32)))


def test_sparse_depth_input_channels():
    d = np.array([[0.0, 2.5], [1.0, 0.0]], dtype=np.float32)
    x = sparse_depth_input(d)
    assert x.shape == (2, 2, 2)
    assert np.array_equal(x[0], d)
    assert np.array_equal(x[1], (d > 0).astype(np.float32))


def test_mask_stem_ignores_depth_scaling():
    """Scaling all depth values must leave the mask pathway's stage-1
    activation untouched; only the value pathway may move."""
    sp = BackboneSparseDepth(_rng())
    rng = np.random.default_rng(3)
    d = rng.uniform(0.5, 5.0, (48, 64)).astype(np.float32)
    d[rng.random(d.shape) < 0.9] = 0.0
    x1 = Tensor(sparse_depth_input(d)[None])
    x10 = Tensor(sparse_depth_input(d * 10.0)[None])
    v1, m1 = sp.stem_activations(x1)
    v10, m10 = sp.stem_activations(x10)
    assert np.array_equal(m1.data, m10.data)
    assert not np.allclose(v1.data, v10.data)


def test_fusion_weights_normalized_and_trainable():
    node = FusionNode(_rng(), 3, 8)
    node.raw.data[:] = np.array([0.3, -1.0, 2.0], dtype=np.float32)
    w = node.normalized_weights()
    assert (w.data >= 0).all()
    assert abs(w.data.sum() - 1.0) < 1e-3     # eps in the denominator
    names = [n for n, _ in node.named_parameters()]
    assert any(n.endswith("raw") for n in names), "fusion weights must be trained"

    xs = [Tensor(np.random.default_rng(i).random((1, 8, 4, 4)).astype(np.float32))
          for i in range(3)]
    out = node(xs)
    backward(ops.sum_(out))
    reset_tape()
    assert node.raw.grad is not None and np.any(node.raw.grad != 0)


def test_bifpn_single_level_passthrough():
    layer = BiFPNLayer(_rng(), 8)
    p = Tensor(np.ones((1, 8, 4, 4), dtype=np.float32))
    out = layer([p])
    assert len(out) == 1 and out[0] is p


def test_bifpn_preserves_level_shapes():
    layer = BiFPNLayer(_rng(), NECK_CHANNELS)
    rng = np.random.default_rng(5)
    pyr = [Tensor(rng.random((1, NECK_CHANNELS, 12, 16)).astype(np.float32)),
           Tensor(rng.random((1, NECK_CHANNELS, 6, 8)).astype(np.float32)),
           Tensor(rng.random((1, NECK_CHANNELS, 3, 4)).astype(np.float32))]
    out = layer(pyr)
    assert [o.shape for o in out] == [p.shape for p in pyr]


def test_neck_level_count_mismatch():
    neck = NeckRGB(_rng())
    with pytest.raises(ShapeError):
        neck([Tensor(np.zeros((1, 32, 12, 16), dtype=np.float32))])


def test_neck_output_width():
    neck = NeckRGB(_rng())
    rng = np.random.default_rng(6)
    pyr = [Tensor(rng.random((1, c, hw[0], hw[1])).astype(np.float32))
           for c, hw in zip((32, 48, 64), ((12, 16), (6, 8), (3, 4)))]
    out = neck(pyr)
    assert all(o.shape[1] == NECK_CHANNELS for o in out)


def test_heads_share_one_backbone_instance():
    """Seg and pose consume the same neck pyramid from the same trunk
    parameters; a backbone tensor receives gradient from either task."""
    model = MultiTaskModel(_rng())
    rgb = np.random.default_rng(7).random((1, 3, 48, 64)).astype(np.float32)

    _, neck_pyr = model.rgb_features(rgb)
    loss = ops.sum_(model.predict_seg_logits(neck_pyr))
    backward(loss)
    stem_w = model.backbone_rgb.stem.conv.w
    assert stem_w.grad is not None and np.any(stem_w.grad != 0)
    model.zero_grad()
    reset_tape()

    _, neck_pyr = model.rgb_features(rgb)
    heat, off = model.predict_pose_maps(neck_pyr)
    backward(ops.sum_(ops.add(heat, ops.sum_(off))))
    assert stem_w.grad is not None and np.any(stem_w.grad != 0)
    reset_tape()

    # every parameter object appears exactly once in the flat listing
    ids = [id(p) for _, p in model.named_parameters()]
    assert len(ids) == len(set(ids))
