"""Checkpoint persistence: one zip archive per trained model.

Layout: ``manifest.json`` (format version, stage tag, model kind/config,
training extras, per-member SHA-256) plus one ``.npy`` per named parameter
and an optional RNG state blob. Hashes are verified on load, so a tampered
or truncated archive fails loudly instead of producing a subtly wrong model.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointCompatibilityError(CheckpointError):
    pass


@dataclass
class CheckpointBundle:
    stage: str
    model_kind: str
    model_config: dict
    state: dict[str, np.ndarray]
    extras: dict = field(default_factory=dict)
    rng_state: bytes | None = None
    version: int = CHECKPOINT_VERSION


def state_to_numpy(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_state(module: nn.Module, state: dict[str, np.ndarray]) -> None:
    tensors = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in state.items()}
    module.load_state_dict(tensors)


def _sha256(data: bytes) -> str:
    import hashlib

    return hashlib.sha256(data).hexdigest()


def save_checkpoint(bundle: CheckpointBundle, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    members: dict[str, bytes] = {}
    for name, arr in bundle.state.items():
        buf = io.BytesIO()
        np.save(buf, arr)
        members[f"arrays/{name}.npy"] = buf.getvalue()
    if bundle.rng_state is not None:
        members["rng_state.bin"] = bundle.rng_state
    manifest = {
        "version": bundle.version,
        "stage": bundle.stage,
        "model_kind": bundle.model_kind,
        "model_config": bundle.model_config,
        "extras": bundle.extras,
        "members": {name: _sha256(data) for name, data in members.items()},
        "state_keys": list(bundle.state.keys()),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for name, data in members.items():
            zf.writestr(name, data)
    return path


def load_checkpoint(path) -> CheckpointBundle:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            raw = {name: zf.read(name) for name in manifest["members"]}
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as exc:
        raise CorruptCheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {manifest.get('version')} != supported {CHECKPOINT_VERSION}"
        )
    for name, digest in manifest["members"].items():
        if _sha256(raw[name]) != digest:
            raise CorruptCheckpointError(f"hash mismatch for {name} in {path}")
    state = {}
    for key in manifest["state_keys"]:
        state[key] = np.load(io.BytesIO(raw[f"arrays/{key}.npy"]))
    return CheckpointBundle(
        stage=manifest["stage"],
        model_kind=manifest["model_kind"],
        model_config=manifest["model_config"],
        state=state,
        extras=manifest["extras"],
        rng_state=raw.get("rng_state.bin"),
        version=manifest["version"],
    )


def require_matching_config(bundle: CheckpointBundle, expected) -> None:
    """Raise, naming the offending field, if the checkpoint's model config
    differs from the expected one."""
    expected_dict = asdict(expected) if not isinstance(expected, dict) else expected
    stored = bundle.model_config
    for key in sorted(set(stored) | set(expected_dict)):
        a, b = stored.get(key), expected_dict.get(key)
        if isinstance(a, list):
            a = tuple(a)
        if isinstance(b, list):
            b = tuple(b)
        if a != b:
            raise CheckpointCompatibilityError(
                f"model config mismatch on field {key!r}: checkpoint has {a!r}, expected {b!r}"
            )


def build_model(bundle: CheckpointBundle) -> nn.Module:
    """Reconstruct the model a bundle was saved from and load its weights."""
    if bundle.model_kind == "video_unet":
        from .unet import UNetConfig, VideoUNet

        cfg_dict = dict(bundle.model_config)
        cfg_dict["channel_multipliers"] = tuple(cfg_dict["channel_multipliers"])
        if cfg_dict.get("attention_levels") is not None:
            cfg_dict["attention_levels"] = tuple(cfg_dict["attention_levels"])
        model = VideoUNet(UNetConfig(**cfg_dict))
    elif bundle.model_kind == "frame_vae":
        from .vae import FrameVAE, VAEConfig

        model = FrameVAE(VAEConfig(**bundle.model_config))
    else:
        raise CheckpointError(f"unknown model kind {bundle.model_kind!r}")
    load_state(model, bundle.state)
    model.eval()
    return model
