"""Stick-figure keypoint samples: the human pose stand-in dataset.

Each sample is 1-3 articulated figures over a noise background, drawn
painter-style (later figure = nearer). Keypoints are K=5 per person:
head, left/right hand, left/right foot. A keypoint is recorded visible
only when it lies inside the image and is not covered by a nearer
figure's body.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import value_noise

KEYPOINT_NAMES = ("head", "left_hand", "right_hand", "left_foot", "right_foot")
NUM_KEYPOINTS = len(KEYPOINT_NAMES)


@dataclass
class PoseSample:
    rgb: np.ndarray          # (3,H,W) float32 in [0,1]
    keypoints: np.ndarray    # (P,K,3) float32: x, y, visible flag
    centers: np.ndarray      # (P,2) float32: mean of the person's keypoints
    sample_id: int = 0


def _segment_mask(h, w, p0, p1, radius):
    """Pixels within ``radius`` of segment p0-p1 (pixel-center metric)."""
    ys, xs = np.mgrid[0:h, 0:w]
    d = p1 - p0
    len2 = float(d @ d)
    if len2 < 1e-12:
        dist2 = (xs - p0[0]) ** 2 + (ys - p0[1]) ** 2
    else:
        t = np.clip(((xs - p0[0]) * d[0] + (ys - p0[1]) * d[1]) / len2, 0.0, 1.0)
        dist2 = (xs - p0[0] - t * d[0]) ** 2 + (ys - p0[1] - t * d[1]) ** 2
    return dist2 <= radius * radius


def _build_figure(rng, w, h):
    """Sample an articulated figure; returns (keypoints (K,2), segments, head)."""
    scale = rng.uniform(0.30, 0.55) * h
    cx = rng.uniform(0.18 * w, 0.82 * w)
    cy = rng.uniform(0.30 * h, 0.65 * h)
    lean = rng.uniform(-0.08, 0.08) * scale
    pelvis = np.array([cx, cy + 0.18 * scale])
    neck = np.array([cx + lean, cy - 0.22 * scale])
    head = neck + np.array([rng.uniform(-0.05, 0.05) * scale, -0.14 * scale])

    def limb(root, length, lo_deg, hi_deg):
        ang = np.deg2rad(rng.uniform(lo_deg, hi_deg))
        return root + length * np.array([np.cos(ang), np.sin(ang)])

    # Angles measured with +y down, so 90 deg points at the floor.
    l_hand = limb(neck, 0.34 * scale, 110, 205)
    r_hand = limb(neck, 0.34 * scale, -25, 70)
    l_foot = limb(pelvis, 0.42 * scale, 75, 125)
    r_foot = limb(pelvis, 0.42 * scale, 55, 105)
    kps = np.stack([head, l_hand, r_hand, l_foot, r_foot])
    segments = [(pelvis, neck), (neck, l_hand), (neck, r_hand),
                (pelvis, l_foot), (pelvis, r_foot), (neck, head)]
    thickness = max(1.0, 0.05 * scale)
    head_radius = 0.11 * scale
    return kps, segments, (head, head_radius), thickness


def generate_pose_sample(seed, config) -> PoseSample:
    rng = np.random.default_rng(np.random.SeedSequence([7704, int(seed)]))
    h, w = config.height, config.width
    ys, xs = np.mgrid[0:h, 0:w]
    bg_seed = int(rng.integers(0, 2 ** 31 - 1))
    base = np.array([rng.uniform(0.35, 0.65) for _ in range(3)])
    noise = value_noise(xs / 9.0, ys / 9.0, bg_seed)
    rgb = base[:, None, None] * (0.8 + 0.4 * noise[None])

    n_persons = int(rng.integers(config.persons_min, config.persons_max + 1))
    figures = [_build_figure(rng, w, h) for _ in range(n_persons)]
    colors = [np.clip(np.array([rng.uniform(0.1, 0.9) for _ in range(3)]), 0.05, 0.95)
              for _ in range(n_persons)]

    masks = []
    for (kps, segments, (head_c, head_r), thick) in figures:
        body = np.zeros((h, w), dtype=bool)
        for p0, p1 in segments:
            body |= _segment_mask(h, w, p0, p1, thick)
        body |= (xs - head_c[0]) ** 2 + (ys - head_c[1]) ** 2 <= head_r ** 2
        masks.append(body)

    # Painter order: index 0 drawn first (farthest).
    for body, color in zip(masks, colors):
        rgb[:, body] = color[:, None] * (0.85 + 0.3 * noise[None, body])

    keypoints = np.zeros((n_persons, NUM_KEYPOINTS, 3), dtype=np.float32)
    centers = np.zeros((n_persons, 2), dtype=np.float32)
    for i, (kps, _, _, _) in enumerate(figures):
        centers[i] = kps.mean(axis=0)
        for k, (x, y) in enumerate(kps):
            inside = 0.0 <= x <= w - 1 and 0.0 <= y <= h - 1
            visible = inside
            if inside:
                px, py = int(round(x)), int(round(y))
                for j in range(i + 1, n_persons):   # nearer figures only
                    if masks[j][py, px]:
                        visible = False
                        break
            keypoints[i, k] = (x, y, 1.0 if visible else 0.0)
    return PoseSample(rgb=np.clip(rgb, 0, 1).astype(np.float32),
                      keypoints=keypoints, centers=centers, sample_id=int(seed))
