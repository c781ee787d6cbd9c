"""Four-stage generation pipeline: keyframes -> interpolation -> pixel SR ->
latent SR, with per-stage RNG substreams and intermediate persistence."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor

from .checkpoint import CheckpointBundle, CheckpointError, build_model, load_checkpoint
from .config import (
    LadderError,
    PipelineConfig,
    interpolation_from_json,
    keyframe_from_json,
    latent_sr_from_json,
    pixel_sr_from_json,
    validate_pipeline_config,
)
from .rng import RngStreams
from .stages.interpolation import sample_interpolation
from .stages.keyframe import sample_keyframes
from .stages.latent_sr import sdedit_upscale
from .stages.pixel_sr import sample_sr_stitched
from .videoio import export_video

STAGE_ORDER = ("keyframe", "interpolation", "pixel_sr", "latent_sr")


def shape_trace(cfg: PipelineConfig) -> list[tuple[str, tuple[int, int, int, int]]]:
    """The (frames, channels, H, W) ladder the pipeline will produce, from
    config arithmetic alone; no models are built."""
    validate_pipeline_config(cfg)
    kf, it, sr, lt = cfg.keyframe, cfg.interpolation, cfg.pixel_sr, cfg.latent_sr
    return [
        ("keyframe", (kf.frames, 3, kf.height, kf.width)),
        ("interpolation", (it.frames, 3, it.height, it.width)),
        ("pixel_sr", (sr.frames, 3, sr.out_height, sr.out_width)),
        ("latent_sr", (lt.frames, 3, lt.out_height, lt.out_width)),
    ]


@dataclass
class PipelineResult:
    final: Tensor
    tensors: dict[str, Tensor] = field(default_factory=dict)
    artifacts: dict[str, Path] = field(default_factory=dict)


def _as_bundle(value) -> CheckpointBundle:
    if isinstance(value, CheckpointBundle):
        return value
    return load_checkpoint(value)


def _resolve_checkpoints(checkpoints: dict) -> dict[str, CheckpointBundle]:
    resolved = {}
    for stage in STAGE_ORDER + ("vae",):
        if stage not in checkpoints:
            raise CheckpointError(f"missing checkpoint for stage {stage!r}")
        bundle = _as_bundle(checkpoints[stage])
        if bundle.stage != stage:
            raise CheckpointError(f"checkpoint for {stage!r} is a {bundle.stage!r} checkpoint")
        resolved[stage] = bundle
    return resolved


def _validate_against_config(bundles: dict[str, CheckpointBundle], cfg: PipelineConfig) -> None:
    stored = PipelineConfig(
        name=cfg.name,
        seed=cfg.seed,
        keyframe=keyframe_from_json(bundles["keyframe"].extras["stage_config"]),
        interpolation=interpolation_from_json(bundles["interpolation"].extras["stage_config"]),
        pixel_sr=pixel_sr_from_json(bundles["pixel_sr"].extras["stage_config"]),
        latent_sr=latent_sr_from_json(bundles["latent_sr"].extras["stage_config"]),
        vae=cfg.vae,
    )
    validate_pipeline_config(stored)
    for (name_a, shape_a), (name_b, shape_b) in zip(shape_trace(cfg), shape_trace(stored)):
        if shape_a != shape_b:
            raise LadderError(
                f"stage {name_a}: config expects {shape_a}, checkpoints produce {shape_b}"
            )


def run_pipeline(
    prompt: str,
    checkpoints: dict,
    config: PipelineConfig,
    rng: RngStreams | int,
    out_dir=None,
) -> PipelineResult:
    """Generate a video end to end from a text prompt.

    ``checkpoints`` maps each stage name (plus "vae") to a CheckpointBundle
    or a path. All randomness derives from named per-stage substreams, so a
    fixed seed reproduces the output exactly. When ``out_dir`` is given,
    every stage's output is exported as a frame directory.
    """
    streams = RngStreams(rng) if isinstance(rng, int) else rng
    bundles = _resolve_checkpoints(checkpoints)
    _validate_against_config(bundles, config)
    vae = build_model(bundles["vae"])

    result = PipelineResult(final=torch.empty(0))
    keyframes = sample_keyframes(prompt, bundles["keyframe"], streams.torch("pipeline/keyframe"))
    result.tensors["keyframe"] = keyframes
    interpolated = sample_interpolation(
        keyframes, bundles["interpolation"], streams.torch("pipeline/interpolation"), prompt=prompt
    )
    result.tensors["interpolation"] = interpolated
    upscaled = sample_sr_stitched(
        interpolated, bundles["pixel_sr"], streams.torch("pipeline/pixel_sr"), prompt=prompt
    )
    result.tensors["pixel_sr"] = upscaled
    final = sdedit_upscale(
        upscaled, bundles["latent_sr"], vae, prompt, streams.torch("pipeline/latent_sr")
    )
    result.tensors["latent_sr"] = final
    result.final = final

    if out_dir is not None:
        out = Path(out_dir)
        for stage in STAGE_ORDER:
            fps = config.keyframe.fps if stage == "keyframe" else config.interpolation.fps
            result.artifacts[stage] = export_video(result.tensors[stage], out / stage, fps=fps)
    return result
