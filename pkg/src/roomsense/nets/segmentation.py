"""Semantic segmentation head distilled from precomputed teacher labels."""

from __future__ import annotations

import numpy as np

from ..autodiff import Conv2d, ConvBlock, Module, Tensor, ops


class SegHead(Module):
    """Finest neck level -> per-class logits at full resolution.

    The neck runs at 1/4 scale, so two nearest-neighbor doublings bring
    the logits back to the input size. Upsampling logits rather than
    features keeps the head light.
    """

    def __init__(self, rng, in_channels=32, num_classes=8):
        self.num_classes = num_classes
        self.refine = ConvBlock(rng, in_channels, in_channels)
        self.classify = Conv2d(rng, in_channels, num_classes, k=1)

    def forward(self, neck_pyramid):
        x = self.classify(self.refine(neck_pyramid[0]))
        return ops.nearest_upsample2x(ops.nearest_upsample2x(x))


def loss_distill(logits, teacher_seg):
    """Cross entropy of the student logits against teacher labels.

    logits: (N,C,H,W) Tensor; teacher_seg: (N,H,W) or (H,W) int array.
    """
    labels = np.asarray(teacher_seg)
    if labels.ndim == 2:
        labels = labels[None]
    return ops.cross_entropy(logits, labels)


def predict_labels(logits):
    return np.argmax(logits.data, axis=1)


def seg_accuracy(pred, target):
    """Pixel accuracy plus the mean of per-class accuracies.

    The micro average is the acceptance quantity; the macro average is
    reported alongside because a dominant wall class can hide a head
    that never fires on small classes.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    micro = float((pred == target).mean())
    per_class = []
    for c in np.unique(target):
        m = target == c
        per_class.append(float((pred[m] == c).mean()))
    return micro, float(np.mean(per_class))
