"""Stage 2: mask-conditioned temporal interpolation (8 -> 29 frames).

The model input concatenates [x_t, z, m]: three RGB channels holding the
keyframes at stride-4 positions (zero elsewhere) and a binary availability
mask, with noise conditioning augmentation applied to the keyframe channels.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import torch
from torch import Tensor

from ..checkpoint import CheckpointBundle, build_model, state_to_numpy
from ..conditioning import cfg_dropout
from ..config import InterpolationStageConfig, interpolation_from_json, interpolation_to_json
from ..diffusion import NoiseSchedule, denoising_loss, q_sample
from ..samplers import SamplerConfig, run_sampler
from ..training import train_loop
from .common import draw_clip_index, generator_state, guided_denoiser, init_stage_model

KEYFRAME_STRIDE = 4


@dataclass(frozen=True)
class InterpolationInput:
    """z and m conditioning channels plus the augmentation level fed to the
    model as scalar conditioning."""

    masked_rgb: Tensor  # (frames, 3, H, W), zero off the keyframe slots
    mask: Tensor  # (frames, 1, H, W), 1 on keyframe slots
    aug_level: float = 0.0


def keyframe_indices(n_keyframes: int) -> list[int]:
    return [KEYFRAME_STRIDE * i for i in range(n_keyframes)]


def expanded_frame_count(n_keyframes: int) -> int:
    return KEYFRAME_STRIDE * n_keyframes - (KEYFRAME_STRIDE - 1)


def build_interp_input(keyframes: Tensor) -> InterpolationInput:
    """Lay 8 keyframes onto the 29-frame grid at stride-4 slots."""
    if keyframes.ndim != 4 or keyframes.shape[1] != 3:
        raise ValueError(f"expected (K, 3, H, W) keyframes, got {tuple(keyframes.shape)}")
    k = keyframes.shape[0]
    if k < 2:
        raise ValueError("need at least 2 keyframes")
    frames = expanded_frame_count(k)
    rgb = torch.zeros(frames, *keyframes.shape[1:], dtype=keyframes.dtype)
    mask = torch.zeros(frames, 1, *keyframes.shape[2:], dtype=keyframes.dtype)
    idx = keyframe_indices(k)
    rgb[idx] = keyframes
    mask[idx] = 1.0
    return InterpolationInput(masked_rgb=rgb, mask=mask, aug_level=0.0)


def noise_aug(
    cond: InterpolationInput,
    level: float,
    sched: NoiseSchedule,
    rng: torch.Generator,
    t_frac: float = 0.25,
) -> InterpolationInput:
    """Corrupt the keyframe channels with forward noise at a timestep scaled
    from ``level`` in [0, 1]; masked-out frames are untouched."""
    if level < 0:
        raise ValueError("augmentation level must be >= 0")
    t_aug = round(level * t_frac * sched.T_max)
    if t_aug == 0:
        return replace(cond, aug_level=float(level))
    on = cond.mask[:, 0, 0, 0] > 0
    frames = cond.masked_rgb[on]
    eps = torch.randn(frames.shape, generator=rng, dtype=frames.dtype)
    rgb = cond.masked_rgb.clone()
    rgb[on] = q_sample(frames, min(t_aug, sched.T_max), eps, sched)
    return InterpolationInput(masked_rgb=rgb, mask=cond.mask, aug_level=float(level))


def interp_model_input(x_t: Tensor, cond: InterpolationInput) -> Tensor:
    """Channel-concatenate [x_t, z, m]; identical to the plain denoising
    input except for the appended conditioning channels."""
    return torch.cat([x_t, cond.masked_rgb, cond.mask], dim=-3)


def _check_conditioning(cond: InterpolationInput) -> None:
    off = cond.mask == 0
    if not bool((cond.masked_rgb * off).abs().max() == 0):
        raise ValueError("conditioning integrity violated: z nonzero where mask == 0")


def _masked_frame_loss(out: Tensor, target: Tensor, mask: Tensor) -> Tensor:
    keep = mask[:, 0, 0, 0] == 0
    return torch.mean((out[keep] - target[keep]) ** 2)


def train_interpolation(
    dataset,
    model,
    cfg: InterpolationStageConfig,
    steps: int,
    rng: torch.Generator,
    stop_ratio: float | None = None,
    clip_index: int | None = None,
) -> CheckpointBundle:
    """Noise-prediction training on full 29-frame clips; keyframes are the
    stride-4 subsample of the target clip itself."""
    sched = cfg.schedule.build()
    embedder = cfg.embedder.build()

    def build_cond(clip: Tensor, level: float) -> InterpolationInput:
        cond = build_interp_input(clip[::KEYFRAME_STRIDE])
        cond = noise_aug(cond, level, sched, rng, cfg.aug_t_frac)
        _check_conditioning(cond)
        return cond

    eval_clip, eval_prompt = dataset[clip_index if clip_index is not None else 0]
    if eval_clip.shape[0] != cfg.frames:
        raise ValueError(f"dataset clips have {eval_clip.shape[0]} frames, config wants {cfg.frames}")
    eval_emb = embedder(eval_prompt)
    eval_cond = build_cond(eval_clip, cfg.aug_level_inference)
    eval_ts = torch.linspace(1, sched.T_max, 6).round().long().tolist()
    eval_eps = [torch.randn(eval_clip.shape, generator=rng) for _ in eval_ts]

    def loss_for(clip, emb, cond, t, eps):
        def model_fn(x_t, tt, c):
            return model(interp_model_input(x_t, cond), tt, c, scalar=cond.aug_level)

        if not cfg.loss_masked_only:
            return denoising_loss(clip, t, eps, emb, model_fn, cfg.param, sched)
        x_t = q_sample(clip, t, eps, sched)
        return _masked_frame_loss(model_fn(x_t, t, emb), eps, cond.mask)

    def eval_loss():
        losses = [
            loss_for(eval_clip, eval_emb, eval_cond, int(t), eps)
            for t, eps in zip(eval_ts, eval_eps)
        ]
        return torch.stack(losses).mean()

    def step_loss():
        clip, prompt = dataset[draw_clip_index(dataset, rng, clip_index)]
        emb = cfg_dropout(embedder(prompt), cfg.guidance.p_drop, rng)
        level = float(torch.rand((), generator=rng))
        cond = build_cond(clip, level)
        t = int(torch.randint(1, sched.T_max + 1, (1,), generator=rng))
        eps = torch.randn(clip.shape, generator=rng)
        return loss_for(clip, emb, cond, t, eps)

    history = train_loop(model, step_loss, steps, cfg.lr, eval_loss, stop_ratio)
    return CheckpointBundle(
        stage="interpolation",
        model_kind="video_unet",
        model_config=asdict(cfg.unet),
        state=state_to_numpy(model),
        extras={
            "stage_config": interpolation_to_json(cfg),
            "loss_curve": history.loss_curve,
            "eval_points": history.eval_points,
            "steps_run": history.steps_run,
        },
        rng_state=generator_state(rng),
    )


def sample_interpolation(
    keyframes: Tensor,
    bundle: CheckpointBundle,
    rng: torch.Generator,
    sampler: SamplerConfig | None = None,
    prompt: str | None = None,
    aug_level: float | None = None,
) -> Tensor:
    """Expand keyframes to the full frame grid; conditioning channels stay
    fixed across sampler steps at a small inference augmentation level."""
    if bundle.stage != "interpolation":
        raise ValueError(f"expected an interpolation checkpoint, got {bundle.stage!r}")
    cfg = interpolation_from_json(bundle.extras["stage_config"])
    expected = (cfg.keyframes, 3, cfg.height, cfg.width)
    if tuple(keyframes.shape) != expected:
        raise ValueError(f"keyframes are {tuple(keyframes.shape)}, checkpoint wants {expected}")
    model = build_model(bundle)
    sched = cfg.schedule.build()
    embedder = cfg.embedder.build()
    level = cfg.aug_level_inference if aug_level is None else aug_level
    cond = noise_aug(build_interp_input(keyframes), level, sched, rng, cfg.aug_t_frac)
    emb = embedder(prompt) if prompt else embedder.null()
    denoise = guided_denoiser(
        model,
        sched,
        cfg.param,
        emb,
        embedder.null(),
        cfg.guidance.guidance_scale if prompt else 1.0,
        extra_channels=torch.cat([cond.masked_rgb, cond.mask], dim=-3),
        scalar=cond.aug_level,
    )
    with torch.no_grad():
        x = run_sampler(
            denoise, (cfg.frames, 3, cfg.height, cfg.width), sampler or cfg.sampler, sched, rng
        )
    return x.clamp(-1.0, 1.0)
