"""Stage 1: pixel-space keyframe generation from text (8 low-res frames)."""
from __future__ import annotations

from dataclasses import asdict

import torch
from torch import Tensor

from ..checkpoint import CheckpointBundle, build_model, state_to_numpy
from ..conditioning import cfg_dropout
from ..config import KeyframeStageConfig, keyframe_from_json, keyframe_to_json
from ..diffusion import denoising_loss
from ..samplers import SamplerConfig, run_sampler
from ..training import train_loop
from .common import draw_clip_index, generator_state, guided_denoiser, init_stage_model


def _eval_batch(clip: Tensor, T_max: int, rng: torch.Generator, n: int = 6):
    ts = torch.linspace(1, T_max, n).round().long().tolist()
    return [(int(t), torch.randn(clip.shape, generator=rng)) for t in ts]


def train_keyframe(
    dataset,
    model,
    cfg: KeyframeStageConfig,
    steps: int,
    rng: torch.Generator,
    stop_ratio: float | None = None,
    clip_index: int | None = None,
) -> CheckpointBundle:
    """Denoising training on (clip, prompt) pairs at the keyframe resolution.

    ``clip_index`` pins training to a single dataset entry (the overfit
    harness); otherwise clips are drawn uniformly.
    """
    sched = cfg.schedule.build()
    embedder = cfg.embedder.build()
    expected = (cfg.frames, 3, cfg.height, cfg.width)

    eval_clip, eval_prompt = dataset[clip_index if clip_index is not None else 0]
    if tuple(eval_clip.shape) != expected:
        raise ValueError(f"dataset clips are {tuple(eval_clip.shape)}, config wants {expected}")
    eval_pairs = _eval_batch(eval_clip, sched.T_max, rng)
    eval_emb = embedder(eval_prompt)

    def model_fn(x_t, t, c):
        return model(x_t, t, c)

    def eval_loss():
        losses = [
            denoising_loss(eval_clip, t, eps, eval_emb, model_fn, cfg.param, sched)
            for t, eps in eval_pairs
        ]
        return torch.stack(losses).mean()

    def step_loss():
        clip, prompt = dataset[draw_clip_index(dataset, rng, clip_index)]
        emb = cfg_dropout(embedder(prompt), cfg.guidance.p_drop, rng)
        t = int(torch.randint(1, sched.T_max + 1, (1,), generator=rng))
        eps = torch.randn(clip.shape, generator=rng)
        return denoising_loss(clip, t, eps, emb, model_fn, cfg.param, sched)

    history = train_loop(model, step_loss, steps, cfg.lr, eval_loss, stop_ratio)
    return CheckpointBundle(
        stage="keyframe",
        model_kind="video_unet",
        model_config=asdict(cfg.unet),
        state=state_to_numpy(model),
        extras={
            "stage_config": keyframe_to_json(cfg),
            "loss_curve": history.loss_curve,
            "eval_points": history.eval_points,
            "steps_run": history.steps_run,
        },
        rng_state=generator_state(rng),
    )


def sample_keyframes(
    prompt: str,
    bundle: CheckpointBundle,
    rng: torch.Generator,
    sampler: SamplerConfig | None = None,
    guidance_scale: float | None = None,
) -> Tensor:
    """Generate (frames, 3, H, W) keyframes in [-1, 1] with CFG at each step."""
    if bundle.stage != "keyframe":
        raise ValueError(f"expected a keyframe checkpoint, got {bundle.stage!r}")
    cfg = keyframe_from_json(bundle.extras["stage_config"])
    model = build_model(bundle)
    sched = cfg.schedule.build()
    embedder = cfg.embedder.build()
    scale = cfg.guidance.guidance_scale if guidance_scale is None else guidance_scale
    denoise = guided_denoiser(model, sched, cfg.param, embedder(prompt), embedder.null(), scale)
    with torch.no_grad():
        x = run_sampler(
            denoise, (cfg.frames, 3, cfg.height, cfg.width), sampler or cfg.sampler, sched, rng
        )
    return x.clamp(-1.0, 1.0)
