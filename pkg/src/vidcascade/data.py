"""Synthetic captioned video clips: colored geometric shapes in motion.

The caption template "a {color} {shape} moving {direction}" fully determines
the motion class, so text-video alignment is learnable at toy scale. Clips
render deterministically from the dataset seed; speed, size and start
position vary per clip but are not captioned.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .imageops import area_downsample
from .rng import derive_seed
from .videoio import export_video, import_video

MANIFEST_NAME = "dataset.json"
DATASET_VERSION = 1

COLORS = {
    "red": (0.90, 0.12, 0.10),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.15, 0.30, 0.90),
    "yellow": (0.92, 0.85, 0.12),
}
SHAPES = ("square", "circle", "triangle")
DIRECTIONS = {
    "right": (1.0, 0.0),
    "left": (-1.0, 0.0),
    "down": (0.0, 1.0),
    "up": (0.0, -1.0),
}


@dataclass(frozen=True)
class ClipRecord:
    directory: str
    frames: int
    height: int
    width: int
    prompt: str
    fps: int
    split: str


def _coverage(shape: str, dx: np.ndarray, dy: np.ndarray, radius: float) -> np.ndarray:
    """Per-pixel coverage of a shape centered at the (dx, dy) origin; dy grows
    downward. Squares use exact box overlap, the rest a 1px soft edge."""
    if shape == "square":
        cx = np.clip(radius + 0.5 - np.abs(dx), 0.0, 1.0)
        cy = np.clip(radius + 0.5 - np.abs(dy), 0.0, 1.0)
        return cx * cy
    if shape == "circle":
        return np.clip(radius + 0.5 - np.hypot(dx, dy), 0.0, 1.0)
    if shape == "triangle":
        # equilateral, apex up, circumradius = radius, inradius = radius/2;
        # inward signed distance to each edge via its outward normal
        c30 = 0.8660254037844386
        d_bottom = radius / 2 - dy
        d_left = radius / 2 + c30 * dx + 0.5 * dy
        d_right = radius / 2 - c30 * dx + 0.5 * dy
        return np.clip(0.5 + np.minimum(d_bottom, np.minimum(d_left, d_right)), 0.0, 1.0)
    raise ValueError(f"unknown shape {shape!r}")


def render_clip(
    height: int,
    width: int,
    frames: int,
    shape: str,
    color: str,
    direction: str,
    start: tuple[float, float],
    step: tuple[float, float],
    radius: float,
) -> Tensor:
    """Render an (F, 3, H, W) clip in [-1, 1]."""
    rgb = np.asarray(COLORS[color], dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(width, dtype=np.float64)[None, :] + 0.5
    out = np.zeros((frames, 3, height, width), dtype=np.float32)
    for k in range(frames):
        cx = start[0] + k * step[0]
        cy = start[1] + k * step[1]
        cov = _coverage(shape, xs - cx, ys - cy, radius)
        out[k] = (cov[None, :, :] * rgb[:, None, None]).astype(np.float32)
    return torch.from_numpy(out) * 2.0 - 1.0


def _axis_start(gen: np.random.Generator, extent: int, disp: float, radius: float) -> float:
    lo, hi = radius + 1.0, extent - radius - 1.0
    a, b = (lo, hi - disp) if disp >= 0 else (lo - disp, hi)
    if b < a:
        raise ValueError(f"extent {extent} too small for radius {radius} and span {disp}")
    return float(gen.uniform(a, b))


def _clip_params(gen: np.random.Generator, height: int, width: int, frames: int):
    shape = SHAPES[gen.integers(len(SHAPES))]
    color = list(COLORS)[gen.integers(len(COLORS))]
    direction = list(DIRECTIONS)[gen.integers(len(DIRECTIONS))]
    radius = float(gen.uniform(0.10, 0.16)) * min(height, width)
    span = float(gen.uniform(0.25, 0.45)) * min(height, width)
    ux, uy = DIRECTIONS[direction]
    steps = max(frames - 1, 1)
    step = (ux * span / steps, uy * span / steps)
    start = (
        _axis_start(gen, width, ux * span, radius),
        _axis_start(gen, height, uy * span, radius),
    )
    prompt = f"a {color} {shape} moving {direction}"
    return shape, color, direction, start, step, radius, prompt


def generate_synthetic_dataset(
    out_dir,
    seed: int,
    n_clips: int,
    dims: tuple[int, int] = (288, 160),
    frames: int = 29,
    fps: int = 8,
) -> Path:
    """Write ``n_clips`` rendered clips plus a dataset manifest; returns its path."""
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    height, width = dims
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_val = max(1, n_clips // 8) if n_clips > 1 else 0
    records = []
    for i in range(n_clips):
        gen = np.random.default_rng(derive_seed(seed, f"clip:{i}"))
        shape, color, direction, start, step, radius, prompt = _clip_params(
            gen, height, width, frames
        )
        clip = render_clip(height, width, frames, shape, color, direction, start, step, radius)
        clip_dir = out / f"clip_{i:05d}"
        export_video(clip, clip_dir, fps=fps)
        records.append(
            ClipRecord(
                directory=clip_dir.name,
                frames=frames,
                height=height,
                width=width,
                prompt=prompt,
                fps=fps,
                split="val" if i >= n_clips - n_val else "train",
            )
        )
    manifest = {
        "version": DATASET_VERSION,
        "seed": seed,
        "height": height,
        "width": width,
        "frames": frames,
        "fps": fps,
        "clips": [asdict(r) for r in records],
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


class ClipDataset:
    """Indexable view over a generated dataset: yields (clip, prompt) pairs.

    ``resolution`` re-derives lower-resolution views by exact area averaging;
    ``stride`` subsamples frames (stride 4 turns 29 frames into the 8
    keyframes). Decoded clips are cached for the small toy datasets.
    """

    def __init__(self, root, split: str | None = None,
                 resolution: tuple[int, int] | None = None,
                 stride: int = 1, cache_clips: int = 8):
        self.root = Path(root)
        manifest = json.loads((self.root / MANIFEST_NAME).read_text())
        if manifest["version"] != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {manifest['version']}")
        self.manifest = manifest
        self.records = [ClipRecord(**r) for r in manifest["clips"]]
        if split is not None:
            self.records = [r for r in self.records if r.split == split]
        self.resolution = resolution
        self.stride = stride
        self._cache: dict[int, Tensor] = {}
        self._cache_clips = cache_clips

    def __len__(self) -> int:
        return len(self.records)

    def _load(self, idx: int) -> Tensor:
        clip = self._cache.get(idx)
        if clip is None:
            clip = import_video(self.root / self.records[idx].directory)
            if len(self._cache) >= self._cache_clips:
                self._cache.pop(next(iter(self._cache)))
            self._cache[idx] = clip
        return clip

    def __getitem__(self, idx: int) -> tuple[Tensor, str]:
        record = self.records[idx]
        clip = self._load(idx)
        if self.stride > 1:
            clip = clip[:: self.stride]
        if self.resolution is not None and self.resolution != (record.height, record.width):
            clip = area_downsample(clip, self.resolution)
        return clip, record.prompt


def centroid(frame: Tensor) -> tuple[float, float]:
    """Intensity-weighted centroid (x, y) of a (3, H, W) frame in [-1, 1]."""
    weight = (frame + 1.0).sum(dim=0)
    total = weight.sum()
    ys = torch.arange(frame.shape[1], dtype=torch.float64)
    xs = torch.arange(frame.shape[2], dtype=torch.float64)
    cy = float((weight.double().sum(dim=1) * ys).sum() / total)
    cx = float((weight.double().sum(dim=0) * xs).sum() / total)
    return cx, cy
