"""Stage 4: latent-space expert super-resolution via noising-denoising.

The latent UNet is trained only on timesteps 1..900 of a 1000-step chain, so
it specializes in detail refinement rather than structure formation.
Inference bilinearly upsamples the incoming clip to the target resolution,
encodes it, partially noises the latents to t_start, and denoises back under
the same text prompt.
"""
from __future__ import annotations

from dataclasses import asdict

import torch
from torch import Tensor

from ..checkpoint import CheckpointBundle, build_model, state_to_numpy
from ..conditioning import cfg_dropout
from ..config import LatentSrStageConfig, latent_sr_from_json, latent_sr_to_json
from ..diffusion import denoising_loss, q_sample
from ..imageops import bilinear_resize
from ..samplers import SamplerConfig, run_sampler
from ..training import train_loop
from ..vae import FrameVAE
from .common import draw_clip_index, generator_state, guided_denoiser


class ExpertRangeError(ValueError):
    """Asked to run the expert model at a timestep it was never trained on."""


def train_expert(
    dataset,
    model,
    vae: FrameVAE,
    cfg: LatentSrStageConfig,
    steps: int,
    rng: torch.Generator,
    stop_ratio: float | None = None,
    clip_index: int | None = None,
) -> CheckpointBundle:
    """Noise-prediction training in latent space, timesteps restricted to the
    expert range; any draw outside it aborts."""
    sched = cfg.schedule.build()
    embedder = cfg.embedder.build()
    latents: dict[int, Tensor] = {}

    def latent_of(idx: int) -> Tensor:
        z = latents.get(idx)
        if z is None:
            clip, _ = dataset[idx]
            if clip.shape[-2:] != (cfg.out_height, cfg.out_width):
                raise ValueError(
                    f"dataset clips are {tuple(clip.shape[-2:])}, config wants "
                    f"{(cfg.out_height, cfg.out_width)}"
                )
            with torch.no_grad():
                z = vae.encode(clip)
            latents[idx] = z
        return z

    def draw_t() -> int:
        t = int(cfg.expert.draw(1, rng))
        if t > cfg.expert.t_max:
            raise AssertionError(f"training timestep {t} escaped the expert range")
        return t

    eval_idx = clip_index if clip_index is not None else 0
    eval_z = latent_of(eval_idx)
    eval_emb = embedder(dataset[eval_idx][1])
    eval_ts = torch.linspace(cfg.expert.t_min, cfg.expert.t_max, 6).round().long().tolist()
    eval_eps = [torch.randn(eval_z.shape, generator=rng) for _ in eval_ts]

    def model_fn(x_t, tt, c):
        return model(x_t, tt, c)

    def eval_loss():
        losses = [
            denoising_loss(eval_z, int(t), eps, eval_emb, model_fn, cfg.param, sched)
            for t, eps in zip(eval_ts, eval_eps)
        ]
        return torch.stack(losses).mean()

    def step_loss():
        idx = draw_clip_index(dataset, rng, clip_index)
        z = latent_of(idx)
        emb = cfg_dropout(embedder(dataset[idx][1]), cfg.guidance.p_drop, rng)
        t = draw_t()
        eps = torch.randn(z.shape, generator=rng)
        return denoising_loss(z, t, eps, emb, model_fn, cfg.param, sched)

    history = train_loop(model, step_loss, steps, cfg.lr, eval_loss, stop_ratio)
    return CheckpointBundle(
        stage="latent_sr",
        model_kind="video_unet",
        model_config=asdict(cfg.unet),
        state=state_to_numpy(model),
        extras={
            "stage_config": latent_sr_to_json(cfg),
            "loss_curve": history.loss_curve,
            "eval_points": history.eval_points,
            "steps_run": history.steps_run,
        },
        rng_state=generator_state(rng),
    )


def sdedit_upscale(
    video: Tensor,
    bundle: CheckpointBundle,
    vae: FrameVAE,
    prompt: str | None,
    rng: torch.Generator,
    t_start: int | None = None,
    sampler: SamplerConfig | None = None,
) -> Tensor:
    """Upsample -> encode -> forward-noise to t_start -> denoise -> decode.

    Refuses t_start beyond the expert training range. t_start = 0 is the
    degenerate path: the bare VAE round trip of the upsampled clip, with no
    diffusion steps (and no output clamping).
    """
    if bundle.stage != "latent_sr":
        raise ValueError(f"expected a latent_sr checkpoint, got {bundle.stage!r}")
    cfg = latent_sr_from_json(bundle.extras["stage_config"])
    expected = (cfg.frames, 3, cfg.in_height, cfg.in_width)
    if tuple(video.shape) != expected:
        raise ValueError(f"input clip is {tuple(video.shape)}, checkpoint wants {expected}")
    start = cfg.t_start if t_start is None else int(t_start)
    if start > cfg.expert.t_max:
        raise ExpertRangeError(
            f"t_start {start} exceeds the expert training range "
            f"[{cfg.expert.t_min}, {cfg.expert.t_max}]; the model is untrained there"
        )
    if start < 0:
        raise ValueError("t_start must be >= 0")

    with torch.no_grad():
        up = bilinear_resize(video, (cfg.out_height, cfg.out_width))
        z = vae.encode(up)
        if start == 0:
            return vae.decode(z)
        model = build_model(bundle)
        sched = cfg.schedule.build()
        embedder = cfg.embedder.build()
        emb = embedder(prompt) if prompt else embedder.null()
        scale = cfg.guidance.guidance_scale if prompt else 1.0
        eps = torch.randn(z.shape, generator=rng)
        z_t = q_sample(z, start, eps, sched)
        denoise = guided_denoiser(
            model, sched, cfg.param, emb, embedder.null(), scale, clip_x0=False
        )
        z0 = run_sampler(
            denoise, z.shape, sampler or cfg.sampler, sched, rng, x_init=z_t, t_start=start
        )
        out = vae.decode(z0)
    return out.clamp(-1.0, 1.0)
