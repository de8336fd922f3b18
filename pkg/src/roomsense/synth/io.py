"""On-disk dataset format: JSON manifest + one binary blob per scene.

Blob layout: 8-byte magic, then field-tagged sections back to back:
    [u16 name_len][name utf8][u8 dtype][u8 ndim][u32 dims...][payload]
dtype codes: 0 = float32, 1 = uint8, 2 = int32, 3 = float64. All values
little-endian, arrays row-major. The manifest carries a format version,
dataset dims, class names, and a sha256 per blob; readers raise
VersionError / ChecksumError / TruncatedError distinctly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, DataError, TruncatedError, VersionError
from ..geometry import Box3D, CameraIntrinsics, RelativePose
from .people import KEYPOINT_NAMES, PoseSample, generate_pose_sample
from .render import Frame, render_scene, teacher_labels
from .scenes import CLASS_NAMES, SynthConfig, generate_scene

FORMAT_VERSION = 1
MAGIC = b"RSBLOB01"

_DTYPES = {0: "<f4", 1: "|u1", 2: "<i4", 3: "<f8"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1,
          np.dtype(np.int32): 2, np.dtype(np.float64): 3}


def pack_blob(arrays):
    out = [MAGIC]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise DataError(f"blob field {name!r}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        code = _CODES[arr.dtype]
        out.append(arr.astype(_DTYPES[code]).tobytes())
    return b"".join(out)


def unpack_blob(raw, path="<blob>"):
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise VersionError(f"{path}: bad blob magic {raw[:8]!r}")
    pos = len(MAGIC)
    arrays = {}

    def need(n):
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedError(f"{path}: blob ends mid-section at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (name_len,) = struct.unpack("<H", need(2))
        name = need(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", need(2))
        if code not in _DTYPES:
            raise VersionError(f"{path}: unknown dtype code {code} for field {name!r}")
        dims = struct.unpack(f"<{ndim}I", need(4 * ndim))
        dt = np.dtype(_DTYPES[code])
        count = int(np.prod(dims)) if dims else 1
        payload = need(count * dt.itemsize)
        arrays[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    return arrays


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def _scene_arrays(frames):
    f = len(frames)
    rgb = np.stack([fr.rgb for fr in frames])
    sparse = np.stack([fr.sparse_depth for fr in frames])
    depth = np.stack([fr.gt_depth for fr in frames])
    seg = np.stack([fr.gt_seg for fr in frames])
    teacher = np.stack([fr.teacher_seg for fr in frames])
    cams = np.stack([fr.cam_to_world for fr in frames])
    rows = []
    for t, fr in enumerate(frames):
        for b in fr.gt_boxes:
            rows.append([t, b.class_id, *b.center, *b.size])
    boxes = np.array(rows, dtype=np.float64).reshape(-1, 8)
    intr = frames[0].intrinsics
    intr_row = np.array([intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height],
                        dtype=np.float64)
    return {"rgb": rgb, "sparse_depth": sparse, "gt_depth": depth, "gt_seg": seg,
            "teacher_seg": teacher, "cam_to_world": cams, "gt_boxes": boxes,
            "intrinsics": intr_row,
            "meta": np.array([f, frames[0].scene_id], dtype=np.int32)}


def _frames_from_arrays(arrays):
    intr_row = arrays["intrinsics"]
    intr = CameraIntrinsics(intr_row[0], intr_row[1], intr_row[2], intr_row[3],
                            int(intr_row[4]), int(intr_row[5]))
    f, scene_id = (int(x) for x in arrays["meta"])
    frames = []
    for t in range(f):
        rows = arrays["gt_boxes"]
        boxes = [Box3D(r[2:5], r[5:8], class_id=int(r[1]))
                 for r in rows if int(r[0]) == t]
        frames.append(Frame(rgb=arrays["rgb"][t], sparse_depth=arrays["sparse_depth"][t],
                            intrinsics=intr, gt_depth=arrays["gt_depth"][t],
                            gt_seg=arrays["gt_seg"][t], gt_boxes=boxes,
                            cam_to_world=arrays["cam_to_world"][t],
                            frame_id=t, scene_id=scene_id,
                            teacher_seg=arrays["teacher_seg"][t]))
    for t in range(f - 1):
        rel = np.linalg.inv(arrays["cam_to_world"][t + 1]) @ arrays["cam_to_world"][t]
        frames[t].gt_pose_to_next = RelativePose(rel[:3, :3], rel[:3, 3])
    return frames


def generate_scene_dataset(path, seed, n_scenes, config: SynthConfig):
    """Render ``n_scenes`` scenes and serialize them under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_scenes):
        scene_seed = int(seed) * 1000003 + i
        frames = render_scene(generate_scene(scene_seed, config))
        for t, fr in enumerate(frames):
            fr.teacher_seg = teacher_labels(fr.gt_seg, config.teacher_noise_rate,
                                            seed=scene_seed * 131 + t)
        blob = pack_blob(_scene_arrays(frames))
        fname = f"scene_{i:05d}.bin"
        (path / fname).write_bytes(blob)
        entries.append({"file": fname, "seed": scene_seed, "sha256": _sha256(blob)})
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "scenes",
        "seed": int(seed),
        "scene_count": n_scenes,
        "frames_per_scene": config.frames_per_scene,
        "image": [config.width, config.height],
        "lidar_grid": list(config.lidar_grid),
        "class_names": list(CLASS_NAMES),
        "config": asdict(config),
        "scenes": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def generate_pose_dataset(path, seed, n_samples, config: SynthConfig):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_samples):
        sample = generate_pose_sample(int(seed) * 1000003 + i, config)
        blob = pack_blob({"rgb": sample.rgb, "keypoints": sample.keypoints,
                          "centers": sample.centers,
                          "meta": np.array([sample.sample_id], dtype=np.int32)})
        fname = f"pose_{i:05d}.bin"
        (path / fname).write_bytes(blob)
        entries.append({"file": fname, "seed": int(seed) * 1000003 + i,
                        "sha256": _sha256(blob)})
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "pose",
        "seed": int(seed),
        "sample_count": n_samples,
        "image": [config.width, config.height],
        "keypoint_names": list(KEYPOINT_NAMES),
        "config": asdict(config),
        "samples": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


class _BaseDataset:
    def __init__(self, path, kind):
        self.path = Path(path)
        mf = self.path / "manifest.json"
        if not mf.exists():
            raise DataError(f"{self.path}: no manifest.json")
        self.manifest = json.loads(mf.read_text())
        version = self.manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionError(f"{mf}: format_version {version}, reader supports {FORMAT_VERSION}")
        if self.manifest.get("kind") != kind:
            raise DataError(f"{mf}: dataset kind {self.manifest.get('kind')!r}, expected {kind!r}")

    def _read_blob(self, entry):
        fpath = self.path / entry["file"]
        raw = fpath.read_bytes()
        if _sha256(raw) != entry["sha256"]:
            raise ChecksumError(f"{fpath}: sha256 mismatch")
        return unpack_blob(raw, str(fpath))


class SceneDataset(_BaseDataset):
    def __init__(self, path):
        super().__init__(path, "scenes")
        self.config = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in self.manifest["config"].items()})

    def __len__(self):
        return self.manifest["scene_count"]

    def load_scene(self, index):
        return _frames_from_arrays(self._read_blob(self.manifest["scenes"][index]))


class PoseDataset(_BaseDataset):
    def __init__(self, path):
        super().__init__(path, "pose")
        self.config = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in self.manifest["config"].items()})

    def __len__(self):
        return self.manifest["sample_count"]

    def load_sample(self, index):
        arrays = self._read_blob(self.manifest["samples"][index])
        return PoseSample(rgb=arrays["rgb"], keypoints=arrays["keypoints"],
                          centers=arrays["centers"], sample_id=int(arrays["meta"][0]))
