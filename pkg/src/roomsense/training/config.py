"""Plain-text key=value configuration with dotted sections.

A config file holds lines like ``trainer.lr_main = 0.001`` or an INI
style ``[trainer]`` header followed by bare ``key = value`` lines; both
spell the same flat dotted key space. ``#`` starts a comment. CLI
``--set section.key=value`` overrides win over the file.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, fields

from ..errors import ConfigError


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_scenes: int = 2          # scenes per step; x frames_per_scene = frame batch
    batch_pose: int = 8
    lr_main: float = 1e-3
    lr_depth_head: float = 1e-4
    seed: int = 0
    task_depth: bool = True
    task_seg: bool = True
    task_det: bool = True
    task_pose: bool = True
    use_semantics: bool = True     # semantic fusion into the vote head
    use_color: bool = True         # colored vs bare point cloud
    lambda_depth: float = 0.05
    lambda_seg: float = 1.0
    lambda_det: float = 1.0
    lambda_pose: float = 1.0
    eval_fraction: float = 0.1
    eval_every: int = 5

    def __post_init__(self):
        if not (self.task_depth or self.task_seg or self.task_det or self.task_pose):
            raise ConfigError("at least one task must be enabled")
        if self.epochs < 1 or self.batch_scenes < 1 or self.batch_pose < 1:
            raise ConfigError("epochs and batch sizes must be >= 1")
        if self.lr_main <= 0 or self.lr_depth_head <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in (0, 1)")

    def enabled_tasks(self):
        return tuple(t for t, on in (("depth", self.task_depth), ("seg", self.task_seg),
                                     ("det", self.task_det), ("pose", self.task_pose)) if on)


def parse_config_text(text):
    """Flat dict of dotted keys -> raw string values."""
    out = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"line {lineno}: empty section name")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        full = f"{section}.{key}" if section and "." not in key else key
        out[full] = value
    return out


def apply_overrides(flat, overrides):
    """Merge ``--set key=value`` strings over parsed file values."""
    merged = dict(flat)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        merged[key] = value
    return merged


def _coerce(value, target_type, key):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if target_type is tuple:
        try:
            return tuple(int(p) for p in value.replace("x", ",").split(",") if p.strip())
        except ValueError:
            raise ConfigError(f"{key}: expected comma- or x-separated ints, got {value!r}")
    try:
        return target_type(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {target_type.__name__}, got {value!r}")


def section_kwargs(flat, section, dataclass_type):
    """Typed kwargs for one dataclass from a flat dotted-key dict.

    Unknown keys inside the section raise with a closest-match hint;
    keys of other sections are ignored.
    """
    known = {f.name: f.type for f in fields(dataclass_type)}
    types = {f.name: type(f.default) for f in fields(dataclass_type)}
    kwargs = {}
    prefix = section + "."
    for key, value in flat.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in known:
            hint = difflib.get_close_matches(name, known, n=1)
            extra = f"; did you mean {prefix + hint[0]!r}?" if hint else ""
            raise ConfigError(f"unknown config key {key!r}{extra}")
        kwargs[name] = _coerce(value, types[name], key)
    return kwargs


def load_train_config(path=None, overrides=None):
    flat = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            flat = parse_config_text(fh.read())
    flat = apply_overrides(flat, overrides)
    return TrainConfig(**section_kwargs(flat, "trainer", TrainConfig)), flat
