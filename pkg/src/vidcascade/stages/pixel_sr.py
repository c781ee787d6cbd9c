"""Stage 3: pixel-space 4x super-resolution with SNR-augmented bilinear
conditioning channels and four-segment stitched inference.

Sampling runs one temporal segment at a time; each later segment's first
conditioning frame is replaced, bit for bit, by the previously generated
segment's last output frame to keep the seams coherent.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import Tensor

from ..checkpoint import CheckpointBundle, build_model, state_to_numpy
from ..conditioning import cfg_dropout
from ..config import PixelSrStageConfig, pixel_sr_from_json, pixel_sr_to_json
from ..diffusion import denoising_loss
from ..imageops import area_downsample, bilinear_upsample
from ..samplers import SamplerConfig, run_sampler
from ..training import train_loop
from .common import draw_clip_index, generator_state, guided_denoiser


@dataclass(frozen=True)
class SegmentPlan:
    """Contiguous, non-overlapping frame ranges covering the whole clip."""

    boundaries: tuple[tuple[int, int], ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(e - s for s, e in self.boundaries)


def plan_segments(frames: int, segments: int) -> SegmentPlan:
    """Near-equal contiguous split; leading segments absorb the remainder."""
    if segments < 1 or frames < segments:
        raise ValueError(f"cannot split {frames} frames into {segments} segments")
    base, rem = divmod(frames, segments)
    bounds, start = [], 0
    for k in range(segments):
        size = base + (1 if k < rem else 0)
        bounds.append((start, start + size))
        start += size
    return SegmentPlan(boundaries=tuple(bounds))


def snr_noise_aug(cond: Tensor, snr: float, rng: torch.Generator) -> tuple[Tensor, float]:
    """Variance-preserving mix with exact signal-to-noise ratio ``snr`` on a
    unit-variance signal; the ratio is returned for scalar conditioning."""
    if snr <= 0:
        raise ValueError(f"snr must be positive, got {snr}")
    norm = math.sqrt(1.0 + snr * snr)
    eps = torch.randn(cond.shape, generator=rng, dtype=cond.dtype)
    return (snr / norm) * cond + (1.0 / norm) * eps, float(snr)


def _draw_log_uniform(lo: float, hi: float, rng: torch.Generator) -> float:
    u = float(torch.rand((), generator=rng))
    return math.exp(math.log(lo) + u * (math.log(hi) - math.log(lo)))


def train_pixel_sr(
    dataset,
    model,
    cfg: PixelSrStageConfig,
    steps: int,
    rng: torch.Generator,
    stop_ratio: float | None = None,
    clip_index: int | None = None,
) -> CheckpointBundle:
    """v-prediction training on (low, high) pairs; the low-resolution input
    is the exact area-downsample of the high-resolution target.

    ``train_crop`` / ``train_frames`` restrict each step to a spatial crop
    and temporal window so full-resolution clips stay affordable on CPU.
    """
    sched = cfg.schedule.build()
    embedder = cfg.embedder.build()
    out_hw = (cfg.out_height, cfg.out_width)

    def make_pair(clip: Tensor):
        if clip.shape[-2:] != out_hw:
            raise ValueError(f"dataset clips are {tuple(clip.shape[-2:])}, config wants {out_hw}")
        low = area_downsample(clip, (cfg.in_height, cfg.in_width))
        cond = bilinear_upsample(low, cfg.factor)
        return clip, cond

    def window_and_crop(high: Tensor, cond: Tensor):
        if cfg.train_frames is not None and cfg.train_frames < high.shape[0]:
            f0 = int(torch.randint(high.shape[0] - cfg.train_frames + 1, (1,), generator=rng))
            high, cond = high[f0 : f0 + cfg.train_frames], cond[f0 : f0 + cfg.train_frames]
        if cfg.train_crop is not None:
            ch, cw = cfg.train_crop
            oy = int(torch.randint(high.shape[-2] - ch + 1, (1,), generator=rng))
            ox = int(torch.randint(high.shape[-1] - cw + 1, (1,), generator=rng))
            high = high[..., oy : oy + ch, ox : ox + cw]
            cond = cond[..., oy : oy + ch, ox : ox + cw]
        return high, cond

    eval_clip, eval_prompt = dataset[clip_index if clip_index is not None else 0]
    eval_high_full, eval_cond_full = make_pair(eval_clip)
    eval_high = eval_high_full[: cfg.train_frames or eval_high_full.shape[0]]
    eval_cond_base = eval_cond_full[: eval_high.shape[0]]
    if cfg.train_crop is not None:
        ch, cw = cfg.train_crop
        eval_high = eval_high[..., :ch, :cw]
        eval_cond_base = eval_cond_base[..., :ch, :cw]
    eval_emb = embedder(eval_prompt)
    eval_cond, eval_snr = snr_noise_aug(eval_cond_base, cfg.snr_inference, rng)
    eval_ts = torch.linspace(1, sched.T_max, 6).round().long().tolist()
    eval_eps = [torch.randn(eval_high.shape, generator=rng) for _ in eval_ts]

    def loss_for(high, emb, cond, snr, t, eps):
        def model_fn(x_t, tt, c):
            return model(torch.cat([x_t, cond], dim=-3), tt, c, scalar=snr)

        return denoising_loss(high, t, eps, emb, model_fn, cfg.param, sched)

    def eval_loss():
        losses = [
            loss_for(eval_high, eval_emb, eval_cond, eval_snr, int(t), eps)
            for t, eps in zip(eval_ts, eval_eps)
        ]
        return torch.stack(losses).mean()

    def step_loss():
        clip, prompt = dataset[draw_clip_index(dataset, rng, clip_index)]
        high, cond = window_and_crop(*make_pair(clip))
        emb = cfg_dropout(embedder(prompt), cfg.guidance.p_drop, rng)
        snr = _draw_log_uniform(cfg.snr_min, cfg.snr_max, rng)
        cond, snr = snr_noise_aug(cond, snr, rng)
        t = int(torch.randint(1, sched.T_max + 1, (1,), generator=rng))
        eps = torch.randn(high.shape, generator=rng)
        return loss_for(high, emb, cond, snr, t, eps)

    history = train_loop(model, step_loss, steps, cfg.lr, eval_loss, stop_ratio)
    return CheckpointBundle(
        stage="pixel_sr",
        model_kind="video_unet",
        model_config=asdict(cfg.unet),
        state=state_to_numpy(model),
        extras={
            "stage_config": pixel_sr_to_json(cfg),
            "loss_curve": history.loss_curve,
            "eval_points": history.eval_points,
            "steps_run": history.steps_run,
        },
        rng_state=generator_state(rng),
    )


def sample_sr_stitched(
    low_res: Tensor,
    bundle: CheckpointBundle,
    rng: torch.Generator,
    snr: float | None = None,
    sampler: SamplerConfig | None = None,
    prompt: str | None = None,
    instrumentation: dict | None = None,
) -> Tensor:
    """Upscale a clip 4x, one temporal segment at a time.

    For every segment after the first, the conditioning channels of its
    first frame are replaced by the already-generated last output frame of
    the previous segment (bypassing SNR augmentation: that frame is clean
    model output). Pass ``instrumentation`` to capture per-segment
    conditioning tensors for verification.
    """
    if bundle.stage != "pixel_sr":
        raise ValueError(f"expected a pixel_sr checkpoint, got {bundle.stage!r}")
    cfg = pixel_sr_from_json(bundle.extras["stage_config"])
    expected = (cfg.frames, 3, cfg.in_height, cfg.in_width)
    if tuple(low_res.shape) != expected:
        raise ValueError(f"low-res clip is {tuple(low_res.shape)}, checkpoint wants {expected}")
    model = build_model(bundle)
    sched = cfg.schedule.build()
    embedder = cfg.embedder.build()
    ratio = cfg.snr_inference if snr is None else snr
    plan = plan_segments(cfg.frames, cfg.segments)
    upsampled = bilinear_upsample(low_res, cfg.factor)
    emb = embedder(prompt) if prompt else embedder.null()
    scale = cfg.guidance.guidance_scale if prompt else 1.0

    outputs: list[Tensor] = []
    recorded: list[Tensor] = []
    with torch.no_grad():
        for k, (s, e) in enumerate(plan.boundaries):
            cond, _ = snr_noise_aug(upsampled[s:e], ratio, rng)
            if k > 0:
                carried = outputs[-1][-1]
                cond[0] = carried
                if not torch.equal(cond[0], carried):
                    raise AssertionError("stitching continuity violated")
            if instrumentation is not None:
                recorded.append(cond.clone())
            denoise = guided_denoiser(
                model, sched, cfg.param, emb, embedder.null(), scale,
                extra_channels=cond, scalar=ratio,
            )
            seg = run_sampler(
                denoise,
                (e - s, 3, cfg.out_height, cfg.out_width),
                sampler or cfg.sampler,
                sched,
                rng,
            )
            outputs.append(seg.clamp(-1.0, 1.0))
    if instrumentation is not None:
        instrumentation["plan"] = plan
        instrumentation["segment_conditioning"] = recorded
    return torch.cat(outputs, dim=0)
