"""Shared plumbing for the four cascade stages."""
from __future__ import annotations

import torch
from torch import Tensor

from ..conditioning import TextEmbedding, cfg_combine
from ..diffusion import NoiseSchedule, Parameterization, predict_x0
from ..rng import derive_seed
from ..unet import UNetConfig, VideoUNet


def init_stage_model(unet_cfg: UNetConfig, seed: int, stage: str) -> VideoUNet:
    """Build a stage UNet with parameter init tied to (seed, stage)."""
    torch.manual_seed(derive_seed(seed, f"init/{stage}"))
    return VideoUNet(unet_cfg)


def generator_state(rng: torch.Generator) -> bytes:
    return rng.get_state().numpy().tobytes()


def guided_denoiser(
    model,
    sched: NoiseSchedule,
    param: Parameterization,
    cond: TextEmbedding,
    null: TextEmbedding,
    scale: float,
    extra_channels: Tensor | None = None,
    scalar: float | None = None,
    clip_x0: bool = True,
):
    """Wrap a model into the ``denoise(x_t, t) -> x0_hat`` contract.

    Applies classifier-free guidance on the raw model output (one
    conditional and one unconditional pass), converts to an x0 estimate,
    and optionally clamps it to the pixel range.
    """

    def denoise(x_t: Tensor, t: int) -> Tensor:
        inp = x_t if extra_channels is None else torch.cat([x_t, extra_channels], dim=-3)
        out = model(inp, t, cond, scalar=scalar)
        if scale != 1.0 and not cond.is_null:
            out_u = model(inp, t, null, scalar=scalar)
            out = cfg_combine(out_u, out, scale)
        x0 = predict_x0(out, x_t, t, param, sched)
        return x0.clamp(-1.0, 1.0) if clip_x0 else x0

    return denoise


def draw_clip_index(dataset, rng: torch.Generator, fixed: int | None) -> int:
    if fixed is not None:
        return fixed
    return int(torch.randint(len(dataset), (1,), generator=rng))
