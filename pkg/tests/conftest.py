"""Shared tiny-scale fixtures: fast configs, in-memory datasets, untrained
stage checkpoints (train functions with steps=0)."""
from dataclasses import asdict

import pytest
import torch

from vidcascade.checkpoint import CheckpointBundle, state_to_numpy
from vidcascade.conditioning import GuidanceConfig
from vidcascade.config import (
    EmbedderConfig,
    InterpolationStageConfig,
    KeyframeStageConfig,
    LatentSrStageConfig,
    PipelineConfig,
    PixelSrStageConfig,
    ScheduleConfig,
)
from vidcascade.diffusion import TimestepRange
from vidcascade.samplers import SamplerConfig
from vidcascade.unet import UNetConfig
from vidcascade.vae import FrameVAE, VAEConfig


def tiny_unet(**kw) -> UNetConfig:
    base = dict(
        base_channels=8,
        depth=2,
        channel_multipliers=(1, 2),
        head_channels=4,
        cross_attention_dim=16,
        max_frames=32,
    )
    base.update(kw)
    return UNetConfig(**base)


TINY_EMB = EmbedderConfig(dim=16, length=4, seed=0)
TINY_GUIDE = GuidanceConfig(p_drop=0.1, guidance_scale=2.0)
TINY_SCHED = ScheduleConfig(steps=50)


def tiny_pipeline_config() -> PipelineConfig:
    return PipelineConfig(
        name="tiny",
        seed=0,
        keyframe=KeyframeStageConfig(
            height=16, width=8, unet=tiny_unet(),
            schedule=TINY_SCHED, sampler=SamplerConfig("dpm_solver_pp_2m", 3, 1.0),
            guidance=TINY_GUIDE, embedder=TINY_EMB, lr=1e-3,
        ),
        interpolation=InterpolationStageConfig(
            height=16, width=8,
            unet=tiny_unet(in_channels=7, extra_cond_channels=4, scalar_cond=True),
            schedule=TINY_SCHED, sampler=SamplerConfig("dpm_solver_pp_2m", 3, 1.0),
            guidance=TINY_GUIDE, embedder=TINY_EMB, lr=1e-3,
        ),
        pixel_sr=PixelSrStageConfig(
            in_height=16, in_width=8,
            unet=tiny_unet(in_channels=6, extra_cond_channels=3, scalar_cond=True),
            schedule=TINY_SCHED, sampler=SamplerConfig("dpm_solver_pp_2m", 2, 1.0),
            guidance=TINY_GUIDE, embedder=TINY_EMB, lr=1e-3,
            train_crop=(32, 16), train_frames=4,
        ),
        latent_sr=LatentSrStageConfig(
            in_height=64, in_width=32, out_height=144, out_width=64,
            unet=tiny_unet(in_channels=4, out_channels=4),
            schedule=ScheduleConfig(steps=50, beta_start=0.0015, beta_end=0.0195),
            sampler=SamplerConfig("ddim", 3, 1.0),
            guidance=GuidanceConfig(p_drop=0.1, guidance_scale=1.5),
            embedder=TINY_EMB, lr=1e-3,
            expert=TimestepRange(1, 45), t_start=45,
        ),
        vae=VAEConfig(base_channels=8),
    )


class MemoryClips:
    """Minimal in-memory (clip, prompt) dataset."""

    def __init__(self, items):
        self.items = list(items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, idx):
        return self.items[idx]


def random_clips(n, frames, height, width, seed=0, prompt="a red square moving right"):
    gen = torch.Generator().manual_seed(seed)
    return MemoryClips(
        [(torch.rand(frames, 3, height, width, generator=gen) * 2 - 1, prompt) for _ in range(n)]
    )


@pytest.fixture(scope="session")
def tiny_cfg() -> PipelineConfig:
    return tiny_pipeline_config()


@pytest.fixture(scope="session")
def tiny_vae(tiny_cfg):
    torch.manual_seed(0)
    return FrameVAE(tiny_cfg.vae)


@pytest.fixture(scope="session")
def tiny_vae_bundle(tiny_vae, tiny_cfg):
    return CheckpointBundle(
        stage="vae",
        model_kind="frame_vae",
        model_config=asdict(tiny_cfg.vae),
        state=state_to_numpy(tiny_vae),
    )


def _untrained_bundle(stage, tiny_cfg):
    """Stage checkpoints with freshly initialized weights (steps=0 training)."""
    from vidcascade.stages.common import init_stage_model
    from vidcascade.stages.interpolation import train_interpolation
    from vidcascade.stages.keyframe import train_keyframe
    from vidcascade.stages.latent_sr import train_expert
    from vidcascade.stages.pixel_sr import train_pixel_sr

    rng = torch.Generator().manual_seed(1)
    if stage == "keyframe":
        cfg = tiny_cfg.keyframe
        data = random_clips(2, cfg.frames, cfg.height, cfg.width)
        model = init_stage_model(cfg.unet, 0, "keyframe")
        return train_keyframe(data, model, cfg, 0, rng)
    if stage == "interpolation":
        cfg = tiny_cfg.interpolation
        data = random_clips(2, cfg.frames, cfg.height, cfg.width)
        model = init_stage_model(cfg.unet, 0, "interpolation")
        return train_interpolation(data, model, cfg, 0, rng)
    if stage == "pixel_sr":
        cfg = tiny_cfg.pixel_sr
        data = random_clips(2, cfg.frames, cfg.out_height, cfg.out_width)
        model = init_stage_model(cfg.unet, 0, "pixel_sr")
        return train_pixel_sr(data, model, cfg, 0, rng)
    if stage == "latent_sr":
        cfg = tiny_cfg.latent_sr
        data = random_clips(2, cfg.frames, cfg.out_height, cfg.out_width)
        model = init_stage_model(cfg.unet, 0, "latent_sr")
        torch.manual_seed(0)
        vae = FrameVAE(VAEConfig(base_channels=8))
        return train_expert(data, model, vae, cfg, 0, rng)
    raise ValueError(stage)


@pytest.fixture(scope="session")
def tiny_keyframe_bundle(tiny_cfg):
    return _untrained_bundle("keyframe", tiny_cfg)


@pytest.fixture(scope="session")
def tiny_interpolation_bundle(tiny_cfg):
    return _untrained_bundle("interpolation", tiny_cfg)


@pytest.fixture(scope="session")
def tiny_pixel_sr_bundle(tiny_cfg):
    return _untrained_bundle("pixel_sr", tiny_cfg)


@pytest.fixture(scope="session")
def tiny_latent_sr_bundle(tiny_cfg):
    return _untrained_bundle("latent_sr", tiny_cfg)
