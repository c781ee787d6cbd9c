"""Frame-directory video persistence.

A clip on disk is a directory of lossless 8-bit RGB PNGs named
``frame_00001.png`` onward plus a ``manifest.json`` with dims/count/fps.
Values map linearly between [-1, 1] and [0, 255] with round-half-to-even,
so an all-zeros clip stores as 128s and a round trip stays within one
quantization step (2/255).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

FRAME_NAME = "frame_{:05d}.png"
MANIFEST_NAME = "manifest.json"


class VideoIOError(RuntimeError):
    pass


def to_uint8(x: Tensor) -> np.ndarray:
    arr = x.detach().cpu().numpy()
    return np.rint((np.clip(arr, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def from_uint8(u: np.ndarray) -> Tensor:
    return torch.from_numpy(u.astype(np.float32) / 127.5 - 1.0)


def export_video(x: Tensor, out_dir, fps: int = 8) -> Path:
    """Write an (F, 3, H, W) clip in [-1, 1] as PNG frames plus a manifest."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise VideoIOError(f"expected (frames, 3, H, W), got {tuple(x.shape)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = to_uint8(x)
    for i, frame in enumerate(frames):
        Image.fromarray(frame.transpose(1, 2, 0), "RGB").save(out / FRAME_NAME.format(i + 1))
    manifest = {
        "frames": int(x.shape[0]),
        "height": int(x.shape[2]),
        "width": int(x.shape[3]),
        "fps": int(fps),
        "format": "png-rgb8",
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def read_video_manifest(clip_dir) -> dict:
    path = Path(clip_dir) / MANIFEST_NAME
    if not path.exists():
        raise VideoIOError(f"missing {MANIFEST_NAME} in {clip_dir}")
    return json.loads(path.read_text())


def import_video(clip_dir) -> Tensor:
    """Load a frame directory back into an (F, 3, H, W) tensor in [-1, 1]."""
    clip_dir = Path(clip_dir)
    manifest = read_video_manifest(clip_dir)
    frames = []
    for i in range(manifest["frames"]):
        path = clip_dir / FRAME_NAME.format(i + 1)
        if not path.exists():
            raise VideoIOError(f"missing frame {path.name} in {clip_dir}")
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
        if arr.shape[:2] != (manifest["height"], manifest["width"]):
            raise VideoIOError(
                f"{path.name} is {arr.shape[1]}x{arr.shape[0]}, manifest says "
                f"{manifest['width']}x{manifest['height']}"
            )
        frames.append(arr.transpose(2, 0, 1))
    return from_uint8(np.stack(frames))
