"""Parameter containers and the few layer types the heads are built from."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import ops
from .tensor import Tensor


class Module:
    """Base class: tracks parameters through attributes and sub-modules.

    Traversal follows attribute insertion order, so parameter naming is
    deterministic for a fixed construction order.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for k, v in vars(self).items():
            if isinstance(v, Tensor):
                if v.requires_grad:
                    yield prefix + k, v
            elif isinstance(v, Module):
                yield from v.named_parameters(prefix + k + ".")
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{k}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{k}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_arrays(self, arrays):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ShapeError("load_arrays", (len(own),), (len(arrays),),
                             detail=f"missing={missing[:3]} extra={extra[:3]}")
        for name, p in own.items():
            arr = np.asarray(arrays[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ShapeError("load_arrays", p.data.shape, arr.shape, detail=name)
            p.data = arr.copy()


def he_weights(rng, shape, fan_in):
    std = np.sqrt(2.0 / max(fan_in, 1))
    return Tensor(rng.normal(0.0, std, size=shape).astype(np.float32), requires_grad=True)


def zeros_param(shape):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k=3, stride=1, padding=None, bias=True):
        self.stride = stride
        self.padding = (k // 2) if padding is None else padding
        self.w = he_weights(rng, (cout, cin, k, k), cin * k * k)
        self.b = zeros_param((cout,)) if bias else None

    def forward(self, x):
        y = ops.conv2d(x, self.w, stride=self.stride, padding=self.padding)
        if self.b is not None:
            n, c, h, w = y.shape
            y = ops.add(y, ops.expand(ops.reshape(self.b, (1, c, 1, 1)), (n, c, h, w)))
        return y


class DepthwiseConv2d(Module):
    def __init__(self, rng, c, k=3, stride=1, padding=None, bias=True):
        self.stride = stride
        self.padding = (k // 2) if padding is None else padding
        self.w = he_weights(rng, (c, k, k), k * k)
        self.b = zeros_param((c,)) if bias else None

    def forward(self, x):
        y = ops.depthwise_conv2d(x, self.w, stride=self.stride, padding=self.padding)
        if self.b is not None:
            n, c, h, w = y.shape
            y = ops.add(y, ops.expand(ops.reshape(self.b, (1, c, 1, 1)), (n, c, h, w)))
        return y


class SeparableConv2d(Module):
    """Depthwise 3x3 followed by pointwise 1x1; the cheap fusion conv."""

    def __init__(self, rng, cin, cout, k=3):
        self.dw = DepthwiseConv2d(rng, cin, k=k, bias=False)
        self.pw = Conv2d(rng, cin, cout, k=1, bias=True)

    def forward(self, x):
        return self.pw(ops.relu(self.dw(x)))


class Linear(Module):
    def __init__(self, rng, fin, fout, bias=True, zero_init=False):
        if zero_init:
            self.w = zeros_param((fin, fout))
        else:
            self.w = he_weights(rng, (fin, fout), fin)
        self.b = zeros_param((fout,)) if bias else None

    def forward(self, x):
        if x.ndim != 2:
            raise ShapeError("linear", x.shape, detail="expected (N, F)")
        y = ops.matmul(x, self.w)
        if self.b is not None:
            n, f = y.shape
            y = ops.add(y, ops.expand(ops.reshape(self.b, (1, f)), (n, f)))
        return y


class ConvBlock(Module):
    """conv 3x3 + relu, the backbone staple."""

    def __init__(self, rng, cin, cout, stride=1):
        self.conv = Conv2d(rng, cin, cout, k=3, stride=stride)

    def forward(self, x):
        return ops.relu(self.conv(x))
