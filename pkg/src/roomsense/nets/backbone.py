"""Shared feature extractors: RGB backbone, sparse-depth backbone, BiFPN neck.

The RGB backbone is a small 4-stage strided CNN standing in for a
RegNetX-400m at the same interface: a 3-level pyramid at 1/4, 1/8, 1/16.
The sparse-depth backbone encodes (value, validity-mask) channels with
separate stage-1 stems so the mask pathway is unaffected by depth
scaling. The neck is three BiFPN layers with fast-normalized nonnegative
fusion weights. Everything here stays under a 200k parameter budget.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Conv2d, ConvBlock, Module, SeparableConv2d, Tensor, ops
from ..errors import ShapeError

RGB_STAGE_CHANNELS = (16, 32, 48, 64)
SPARSE_STAGE_CHANNELS = (16, 24, 32, 32)
NECK_CHANNELS = 32


def _check_dims(x, name):
    if x.ndim != 4:
        raise ShapeError(name, x.shape, detail="expected (N,C,H,W)")
    if x.shape[2] % 16 or x.shape[3] % 16:
        raise ShapeError(name, x.shape, detail="H and W must be divisible by 16")


class BackboneRGB(Module):
    """Stride-2 stem (stage 1) + three strided stages; returns P2..P4."""

    def __init__(self, rng):
        c1, c2, c3, c4 = RGB_STAGE_CHANNELS
        self.stem = ConvBlock(rng, 3, c1, stride=2)
        self.stage2_down = ConvBlock(rng, c1, c2, stride=2)
        self.stage2 = ConvBlock(rng, c2, c2)
        self.stage3_down = ConvBlock(rng, c2, c3, stride=2)
        self.stage3 = ConvBlock(rng, c3, c3)
        self.stage4_down = ConvBlock(rng, c3, c4, stride=2)
        self.stage4 = ConvBlock(rng, c4, c4)

    def forward(self, rgb):
        _check_dims(rgb, "backbone_rgb")
        s1 = self.stem(rgb)
        p2 = self.stage2(self.stage2_down(s1))
        p3 = self.stage3(self.stage3_down(p2))
        p4 = self.stage4(self.stage4_down(p3))
        return [p2, p3, p4]


def sparse_depth_input(sparse_depth):
    """(H,W) sparse map -> (2,H,W): value channel + validity mask."""
    sparse_depth = np.asarray(sparse_depth, dtype=np.float32)
    mask = (sparse_depth > 0).astype(np.float32)
    return np.stack([sparse_depth, mask])


class BackboneSparseDepth(Module):
    """Two-channel encoder with split stage-1 stems.

    The value and mask channels get independent stage-1 convolutions:
    scaling every depth value changes only the value pathway, which is
    what makes the validity signal robust to scene scale.
    """

    def __init__(self, rng):
        c1, c2, c3, c4 = SPARSE_STAGE_CHANNELS
        half = c1 // 2
        self.value_stem = ConvBlock(rng, 1, half, stride=2)
        self.mask_stem = ConvBlock(rng, 1, half, stride=2)
        self.stage2_down = ConvBlock(rng, c1, c2, stride=2)
        self.stage2 = ConvBlock(rng, c2, c2)
        self.stage3_down = ConvBlock(rng, c2, c3, stride=2)
        self.stage3 = ConvBlock(rng, c3, c3)
        self.stage4_down = ConvBlock(rng, c3, c4, stride=2)
        self.stage4 = ConvBlock(rng, c4, c4)

    def stem_activations(self, x):
        value = ops.slice_axis(x, 1, 0, 1)
        mask = ops.slice_axis(x, 1, 1, 2)
        return self.value_stem(value), self.mask_stem(mask)

    def forward(self, x):
        _check_dims(x, "backbone_sparse_depth")
        if x.shape[1] != 2:
            raise ShapeError("backbone_sparse_depth", x.shape, detail="expected 2 channels")
        v, m = self.stem_activations(x)
        s1 = ops.concat([v, m], axis=1)
        p2 = self.stage2(self.stage2_down(s1))
        p3 = self.stage3(self.stage3_down(p2))
        p4 = self.stage4(self.stage4_down(p3))
        return [p2, p3, p4]


class FusionNode(Module):
    """Weighted-sum fusion: softplus weights, fast-normalized, then conv."""

    def __init__(self, rng, n_inputs, channels):
        self.raw = Tensor(np.zeros(n_inputs, dtype=np.float32), requires_grad=True)
        self.conv = SeparableConv2d(rng, channels, channels)
        self.eps = 1e-4

    def normalized_weights(self):
        w = ops.softplus(self.raw)
        total = ops.add(ops.sum_(w), self.eps)
        n = self.raw.shape[0]
        return ops.div(w, ops.expand(ops.reshape(total, (1,)), (n,)))

    def forward(self, inputs):
        w = self.normalized_weights()
        acc = None
        for i, x in enumerate(inputs):
            wi = ops.reshape(ops.slice_axis(w, 0, i, i + 1), (1, 1, 1, 1))
            term = ops.mul(x, ops.expand(wi, x.shape))
            acc = term if acc is None else ops.add(acc, term)
        return self.conv(ops.relu(acc))


class BiFPNLayer(Module):
    """One bidirectional pass over a 3-level pyramid (EfficientDet wiring)."""

    def __init__(self, rng, channels):
        self.td3 = FusionNode(rng, 2, channels)
        self.td2 = FusionNode(rng, 2, channels)
        self.bu3 = FusionNode(rng, 3, channels)
        self.bu4 = FusionNode(rng, 2, channels)

    def forward(self, pyramid):
        if len(pyramid) == 1:
            return list(pyramid)
        p2, p3, p4 = pyramid
        p3td = self.td3([p3, ops.nearest_upsample2x(p4)])
        p2out = self.td2([p2, ops.nearest_upsample2x(p3td)])
        p3out = self.bu3([p3, p3td, ops.max_pool2d(p2out)])
        p4out = self.bu4([p4, ops.max_pool2d(p3out)])
        return [p2out, p3out, p4out]


class NeckRGB(Module):
    """Lateral 1x1 projections to a common width, then stacked BiFPN layers."""

    def __init__(self, rng, in_channels=(32, 48, 64), channels=NECK_CHANNELS, n_layers=3):
        self.laterals = [Conv2d(rng, c, channels, k=1) for c in in_channels]
        self.layers = [BiFPNLayer(rng, channels) for _ in range(n_layers)]
        self.channels = channels

    def forward(self, pyramid):
        if len(pyramid) != len(self.laterals):
            raise ShapeError("neck_rgb", (len(pyramid),), (len(self.laterals),),
                             detail="pyramid level count mismatch")
        levels = [lat(p) for lat, p in zip(self.laterals, pyramid)]
        for layer in self.layers:
            levels = layer(levels)
        return levels
