"""Pinhole projection, SE(3) poses, inverse warping, axis-aligned 3D IoU.

Camera frame: x right, y down, z forward (optical axis). Pixel (u, v)
puts u along image columns and v along rows; depth maps are indexed
[v, u]. Depth is the z coordinate of the surface point, not ray length.

Most functions exist twice: a plain numpy version for data generation
and evaluation, and a tensor version that participates in the gradient
tape (suffix-free, taking/returning ``Tensor``). World extrinsics are
deliberately absent: everything downstream runs in the camera frame of
the current frame, with a single relative pose linking neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, ops
from .errors import DataError

Z_MIN = 1e-3


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise DataError("principal point must lie inside the image")

    def scaled(self, factor):
        """Intrinsics of the same camera at a 1/factor resolution."""
        return CameraIntrinsics(self.fx / factor, self.fy / factor,
                                self.cx / factor, self.cy / factor,
                                self.width // factor, self.height // factor)


@dataclass
class RelativePose:
    """Rigid transform taking points from one camera frame to another."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rtr = self.rotation.T @ self.rotation
        if not np.allclose(rtr, np.eye(3), atol=1e-5):
            raise DataError("rotation is not orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-5:
            raise DataError("rotation determinant is not +1")

    @staticmethod
    def identity():
        return RelativePose(np.eye(3), np.zeros(3))

    def inverse(self):
        rt = self.rotation.T
        return RelativePose(rt, -rt @ self.translation)

    def compose(self, other):
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RelativePose(self.rotation @ other.rotation,
                            self.rotation @ other.translation + self.translation)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


@dataclass
class Box3D:
    """Axis-aligned box in the camera frame."""

    center: np.ndarray
    size: np.ndarray
    class_id: int = 0
    score: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(self.size <= 0):
            raise DataError(f"box size must be positive, got {self.size}")
        if not (0.0 <= self.score <= 1.0):
            raise DataError(f"box score must be in [0,1], got {self.score}")

    @property
    def lo(self):
        return self.center - self.size / 2

    @property
    def hi(self):
        return self.center + self.size / 2

    def volume(self):
        return float(np.prod(self.size))


# ---------------------------------------------------------------------------
# numpy projection (data generation, evaluation)

def pixel_grid(intr):
    """Constant per-pixel ray directions (3, H*W): ((u-cx)/fx, (v-cy)/fy, 1)."""
    u, v = np.meshgrid(np.arange(intr.width, dtype=np.float64),
                       np.arange(intr.height, dtype=np.float64))
    dirs = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)])
    return dirs.reshape(3, -1)


def backward_project_np(depth, intr, rgb=None):
    """Points (N,3) for pixels with depth > 0; optional colors (N,3)."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise DataError(f"depth shape {depth.shape} does not match intrinsics "
                        f"({intr.height}, {intr.width})")
    flat = depth.reshape(-1)
    idx = np.flatnonzero(flat > 0)
    dirs = pixel_grid(intr)[:, idx]
    points = (dirs * flat[idx]).T
    if rgb is None:
        return points, idx
    colors = np.asarray(rgb).reshape(3, -1)[:, idx].T
    return points, idx, colors


def forward_project_np(points, intr):
    """(u, v) pixel coords (N,2) + validity mask (z > Z_MIN, inside image)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = points[:, 2]
    zs = np.maximum(z, Z_MIN)
    u = intr.fx * points[:, 0] / zs + intr.cx
    v = intr.fy * points[:, 1] / zs + intr.cy
    valid = (z > Z_MIN) & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    return np.stack([u, v], axis=1), valid


def axis_angle_to_matrix_np(a):
    a = np.asarray(a, dtype=np.float64).reshape(3)
    theta = np.sqrt(a @ a + 1e-12)
    k = a / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) * np.cos(theta) + np.sin(theta) * kx + (1 - np.cos(theta)) * np.outer(k, k)


# ---------------------------------------------------------------------------
# differentiable projection

def backward_project(depth, intr, rgb=None):
    """Differentiable point cloud from a Tensor depth map.

    Returns (points (N,3) Tensor, kept flat pixel indices (N,) ndarray[,
    colors (N,3) ndarray]). Pixels with depth <= 0 are dropped; an
    all-invalid map yields an empty cloud.
    """
    if depth.shape != (intr.height, intr.width):
        raise DataError(f"depth shape {tuple(depth.shape)} does not match intrinsics "
                        f"({intr.height}, {intr.width})")
    flat = ops.reshape(depth, (intr.height * intr.width,))
    idx = np.flatnonzero(depth.data.reshape(-1) > 0)
    d = ops.gather(flat, idx, axis=0)
    dirs = Tensor(pixel_grid(intr)[:, idx].T.astype(depth.data.dtype))  # (N,3)
    n = idx.size
    points = ops.mul(ops.expand(ops.reshape(d, (n, 1)), (n, 3)), dirs)
    if rgb is None:
        return points, idx
    colors = np.asarray(rgb).reshape(3, -1)[:, idx].T
    return points, idx, colors


def forward_project(points, intr):
    """Differentiable projection of (N,3) Tensor points.

    Returns (u, v) Tensors and a constant validity mask. z is floored at
    Z_MIN through a relu so the division never sees zero; masked entries
    still produce finite coordinates.
    """
    n = points.shape[0]
    x = ops.reshape(ops.slice_axis(points, 1, 0, 1), (n,))
    y = ops.reshape(ops.slice_axis(points, 1, 1, 2), (n,))
    z = ops.reshape(ops.slice_axis(points, 1, 2, 3), (n,))
    zs = ops.add(ops.relu(ops.sub(z, Z_MIN)), Z_MIN)
    u = ops.add(ops.mul(ops.div(x, zs), intr.fx), intr.cx)
    v = ops.add(ops.mul(ops.div(y, zs), intr.fy), intr.cy)
    ud, vd = u.data, v.data
    valid = (z.data > Z_MIN) & (ud >= 0) & (ud <= intr.width - 1) & (vd >= 0) & (vd <= intr.height - 1)
    return u, v, valid


_KX_BASES = (
    np.array([[0., 0., 0.], [0., 0., -1.], [0., 1., 0.]]),
    np.array([[0., 0., 1.], [0., 0., 0.], [-1., 0., 0.]]),
    np.array([[0., -1., 0.], [1., 0., 0.], [0., 0., 0.]]),
)


def axis_angle_to_matrix(a):
    """Differentiable Rodrigues: Tensor (3,) -> Tensor (3,3). Zero -> I."""
    sq = ops.sum_(ops.mul(a, a))
    theta = ops.sqrt(ops.add(sq, 1e-12))
    k = ops.div(a, ops.expand(ops.reshape(theta, (1,)), (3,)))
    c = ops.reshape(ops.cos(theta), (1, 1))
    s = ops.reshape(ops.sin(theta), (1, 1))
    eye = Tensor(np.eye(3, dtype=a.data.dtype))
    kx = None
    for i in range(3):
        ki = ops.reshape(ops.slice_axis(k, 0, i, i + 1), (1, 1))
        term = ops.mul(Tensor(_KX_BASES[i].astype(a.data.dtype)), ki)
        kx = term if kx is None else ops.add(kx, term)
    kcol = ops.reshape(k, (3, 1))
    krow = ops.reshape(k, (1, 3))
    kkt = ops.matmul(kcol, krow)
    one_minus_c = ops.sub(1.0, c)
    return ops.add(ops.add(ops.mul(eye, c), ops.mul(kx, s)), ops.mul(kkt, one_minus_c))


def se3_apply(rot, t, points):
    """Differentiable rigid transform of (N,3) points. rot (3,3), t (3,)."""
    rot = as_tensor(rot, like=points)
    t = as_tensor(t, like=points)
    n = points.shape[0]
    moved = ops.transpose(ops.matmul(rot, ops.transpose(points, (1, 0))), (1, 0))
    return ops.add(moved, ops.expand(ops.reshape(t, (1, 3)), (n, 3)))


def inverse_warp(target_rgb, depth, rot, t, intr):
    """Reconstruct the current frame from a neighbor frame.

    target_rgb: (3,H,W) Tensor (the neighbor image, sampled from);
    depth: (H,W) Tensor for the current frame; rot/t: Tensor or ndarray
    transform from current camera to neighbor camera.

    Returns (warped (3,H,W) Tensor, validity (H,W) bool ndarray). The
    mask combines projection validity with in-bounds sampling, and is
    detached so the loss cannot optimize it.
    """
    h, w = intr.height, intr.width
    n = h * w
    dirs = Tensor(pixel_grid(intr).T.astype(depth.data.dtype))  # (N,3)
    flat = ops.reshape(depth, (n, 1))
    points = ops.mul(ops.expand(flat, (n, 3)), dirs)
    moved = se3_apply(rot, t, points)
    u, v, valid = forward_project(moved, intr)
    warped, in_bounds = ops.bilinear_sample(target_rgb, ops.reshape(u, (h, w)), ops.reshape(v, (h, w)))
    mask = valid.reshape(h, w) & in_bounds
    return warped, mask


# ---------------------------------------------------------------------------
# axis-aligned 3D IoU

def iou_3d(a, b):
    """Exact IoU of two axis-aligned boxes. Symmetric by construction."""
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    inter = float(np.prod(np.maximum(hi - lo, 0.0)))
    union = a.volume() + b.volume() - inter
    return inter / union if union > 0 else 0.0


def iou_3d_matrix(boxes_a, boxes_b):
    """Pairwise IoU of two box lists as an (len(a), len(b)) array."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)))
    lo_a = np.stack([b.lo for b in boxes_a])[:, None, :]
    hi_a = np.stack([b.hi for b in boxes_a])[:, None, :]
    lo_b = np.stack([b.lo for b in boxes_b])[None, :, :]
    hi_b = np.stack([b.hi for b in boxes_b])[None, :, :]
    inter = np.prod(np.maximum(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0.0), axis=2)
    vol_a = np.array([b.volume() for b in boxes_a])[:, None]
    vol_b = np.array([b.volume() for b in boxes_b])[None, :]
    union = vol_a + vol_b - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms_3d(boxes, iou_threshold=0.25):
    """Greedy class-agnostic NMS; returns surviving boxes, best score first."""
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept = []
    for i in order:
        if all(iou_3d(boxes[i], k) <= iou_threshold for k in kept):
            kept.append(boxes[i])
    return kept
