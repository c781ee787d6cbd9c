"""Per-stage and pipeline configuration.

Config files are JSON whose keys mirror the hyperparameter-table row names
(channels, depth, channel_multiplier, head_channels, parameterization,
diffusion_steps, noise_schedule, beta_0, beta_T, sampler, steps, eta,
p_drop, fps), so preset values can be checked against the table by eye.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .conditioning import GuidanceConfig, ToyTextEmbedder
from .diffusion import NoiseSchedule, Parameterization, TimestepRange, build_linear_schedule
from .samplers import SamplerConfig
from .unet import UNetConfig
from .vae import VAEConfig

SAMPLER_NAMES = {"dpm_solver_pp_2m": "DPM++", "ddim": "DDIM", "ancestral_ddpm": "DDPM"}
SAMPLER_KINDS = {v: k for k, v in SAMPLER_NAMES.items()}


class LadderError(ValueError):
    """A stage-to-stage resolution or frame-count contract is violated."""


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 1000
    kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError(f"unsupported schedule kind {self.kind!r}")

    def build(self) -> NoiseSchedule:
        return build_linear_schedule(self.steps, self.beta_start, self.beta_end)


_EMBEDDERS = {"toy": lambda cfg: ToyTextEmbedder(dim=cfg.dim, length=cfg.length, seed=cfg.seed)}


def register_embedder(kind: str, factory) -> None:
    """Plug in an external encoder; it must return objects with an
    ``embed(prompt) -> TextEmbedding`` method and a ``null()`` embedding."""
    _EMBEDDERS[kind] = factory


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "toy"
    dim: int = 64
    length: int = 8
    seed: int = 0

    def build(self):
        if self.kind not in _EMBEDDERS:
            raise ValueError(f"unknown embedder kind {self.kind!r}; registered: {sorted(_EMBEDDERS)}")
        return _EMBEDDERS[self.kind](self)


def _check_divisible(height: int, width: int, depth: int, what: str) -> None:
    div = 2 ** (depth - 1)
    if height % div or width % div:
        raise ValueError(f"{what} dims ({height},{width}) must be divisible by {div}")


@dataclass(frozen=True)
class KeyframeStageConfig:
    height: int = 32
    width: int = 20
    frames: int = 8
    fps: int = 2
    unet: UNetConfig = field(default_factory=UNetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig("dpm_solver_pp_2m", 75, 1.0))
    param: Parameterization = Parameterization.EPSILON
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    lr: float = 1e-4

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError("need at least 2 keyframes")
        _check_divisible(self.height, self.width, self.unet.depth, "keyframe")
        if self.unet.extra_cond_channels != 0 or self.unet.out_channels != 3:
            raise ValueError("keyframe UNet must map 3 -> 3 channels without extras")


@dataclass(frozen=True)
class InterpolationStageConfig:
    height: int = 32
    width: int = 20
    keyframes: int = 8
    frames: int = 29
    fps: int = 8
    unet: UNetConfig = field(
        default_factory=lambda: UNetConfig(in_channels=7, extra_cond_channels=4, scalar_cond=True)
    )
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig("dpm_solver_pp_2m", 50, 1.0))
    param: Parameterization = Parameterization.EPSILON
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    lr: float = 1e-4
    aug_level_inference: float = 0.05
    aug_t_frac: float = 0.25
    loss_masked_only: bool = False

    def __post_init__(self):
        if self.frames != 4 * self.keyframes - 3:
            raise ValueError(
                f"frames ({self.frames}) must be 4*keyframes-3 ({4 * self.keyframes - 3})"
            )
        _check_divisible(self.height, self.width, self.unet.depth, "interpolation")
        if self.unet.extra_cond_channels != 4 or not self.unet.scalar_cond:
            raise ValueError("interpolation UNet needs 4 extra channels and scalar conditioning")


@dataclass(frozen=True)
class PixelSrStageConfig:
    in_height: int = 32
    in_width: int = 20
    factor: int = 4
    frames: int = 29
    fps: int = 8
    segments: int = 4
    unet: UNetConfig = field(
        default_factory=lambda: UNetConfig(in_channels=6, extra_cond_channels=3, scalar_cond=True)
    )
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig("dpm_solver_pp_2m", 125, 1.0))
    param: Parameterization = Parameterization.V
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    lr: float = 1e-4
    snr_min: float = 0.5
    snr_max: float = 20.0
    snr_inference: float = 2.0
    train_crop: tuple[int, int] | None = None
    train_frames: int | None = None

    @property
    def out_height(self) -> int:
        return self.in_height * self.factor

    @property
    def out_width(self) -> int:
        return self.in_width * self.factor

    def __post_init__(self):
        if self.factor != 4:
            raise ValueError("pixel super-resolution factor is fixed at 4")
        if self.segments < 1 or self.frames < self.segments:
            raise ValueError(f"invalid segment count {self.segments} for {self.frames} frames")
        _check_divisible(self.out_height, self.out_width, self.unet.depth, "pixel_sr output")
        if self.train_crop is not None:
            _check_divisible(*self.train_crop, self.unet.depth, "pixel_sr train crop")
        if self.unet.extra_cond_channels != 3 or not self.unet.scalar_cond:
            raise ValueError("pixel SR UNet needs 3 extra channels and scalar conditioning")
        if not (0 < self.snr_min <= self.snr_max):
            raise ValueError("need 0 < snr_min <= snr_max")


@dataclass(frozen=True)
class LatentSrStageConfig:
    in_height: int = 128
    in_width: int = 80
    out_height: int = 288
    out_width: int = 160
    frames: int = 29
    fps: int = 8
    latent_channels: int = 4
    unet: UNetConfig = field(
        default_factory=lambda: UNetConfig(in_channels=4, out_channels=4)
    )
    schedule: ScheduleConfig = field(
        default_factory=lambda: ScheduleConfig(beta_start=0.0015, beta_end=0.0195)
    )
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig("ddim", 40, 1.0))
    param: Parameterization = Parameterization.EPSILON
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    lr: float = 1e-4
    expert: TimestepRange = field(default_factory=lambda: TimestepRange(1, 900))
    t_start: int = 900

    def __post_init__(self):
        if self.out_height % 8 or self.out_width % 8:
            raise ValueError("latent stage output dims must be divisible by the VAE factor 8")
        _check_divisible(self.out_height // 8, self.out_width // 8, self.unet.depth, "latent grid")
        if self.unet.in_channels != self.latent_channels:
            raise ValueError("latent UNet channels must match the VAE latent channels")
        if not (0 <= self.t_start <= self.expert.t_max):
            raise ValueError(
                f"t_start {self.t_start} outside the expert range [0, {self.expert.t_max}]"
            )
        if self.expert.t_max > self.schedule.steps:
            raise ValueError("expert range exceeds the diffusion chain length")


@dataclass(frozen=True)
class PipelineConfig:
    name: str = "toy"
    seed: int = 0
    keyframe: KeyframeStageConfig = field(default_factory=KeyframeStageConfig)
    interpolation: InterpolationStageConfig = field(default_factory=InterpolationStageConfig)
    pixel_sr: PixelSrStageConfig = field(default_factory=PixelSrStageConfig)
    latent_sr: LatentSrStageConfig = field(default_factory=LatentSrStageConfig)
    vae: VAEConfig = field(default_factory=VAEConfig)


def validate_pipeline_config(cfg: PipelineConfig) -> None:
    """Reject any stage-to-stage dimension contract violation before compute."""
    kf, it, sr, lt = cfg.keyframe, cfg.interpolation, cfg.pixel_sr, cfg.latent_sr
    if (kf.height, kf.width) != (it.height, it.width):
        raise LadderError(
            f"keyframe -> interpolation: dims {(kf.height, kf.width)} != {(it.height, it.width)}"
        )
    if kf.frames != it.keyframes:
        raise LadderError(
            f"keyframe -> interpolation: {kf.frames} keyframes != expected {it.keyframes}"
        )
    if (it.height, it.width) != (sr.in_height, sr.in_width):
        raise LadderError(
            f"interpolation -> pixel_sr: dims {(it.height, it.width)} != "
            f"{(sr.in_height, sr.in_width)}"
        )
    if it.frames != sr.frames:
        raise LadderError(f"interpolation -> pixel_sr: {it.frames} frames != {sr.frames}")
    if (sr.out_height, sr.out_width) != (lt.in_height, lt.in_width):
        raise LadderError(
            f"pixel_sr -> latent_sr: dims {(sr.out_height, sr.out_width)} != "
            f"{(lt.in_height, lt.in_width)}"
        )
    if sr.frames != lt.frames:
        raise LadderError(f"pixel_sr -> latent_sr: {sr.frames} frames != {lt.frames}")
    # the final stage's ladder is anisotropic: height grows 9/4, width 2x
    # (256x160 -> 576x320 at paper scale, 128x80 -> 288x160 at toy scale)
    if lt.in_height * 9 != lt.out_height * 4 or lt.in_width * 2 != lt.out_width:
        raise LadderError(
            f"latent_sr: output {(lt.out_height, lt.out_width)} must be "
            f"(9/4, 2)x input {(lt.in_height, lt.in_width)}"
        )
    if lt.latent_channels != cfg.vae.latent_channels:
        raise LadderError(
            f"latent_sr -> vae: latent channels {lt.latent_channels} != "
            f"{cfg.vae.latent_channels}"
        )


# ---------------------------------------------------------------------------
# presets


def _toy_unet(**kw) -> UNetConfig:
    base = dict(
        base_channels=32,
        depth=3,
        channel_multipliers=(1, 2, 4),
        head_channels=8,
        cross_attention_dim=64,
        max_frames=32,
    )
    base.update(kw)
    return UNetConfig(**base)


def toy_config(seed: int = 0) -> PipelineConfig:
    emb = EmbedderConfig()
    guidance = GuidanceConfig(p_drop=0.1, guidance_scale=2.0)
    cfg = PipelineConfig(
        name="toy",
        seed=seed,
        keyframe=KeyframeStageConfig(
            height=32,
            width=20,
            unet=_toy_unet(),
            sampler=SamplerConfig("dpm_solver_pp_2m", 12, 1.0),
            guidance=guidance,
            embedder=emb,
            lr=2e-3,
        ),
        interpolation=InterpolationStageConfig(
            height=32,
            width=20,
            unet=_toy_unet(in_channels=7, extra_cond_channels=4, scalar_cond=True),
            sampler=SamplerConfig("dpm_solver_pp_2m", 10, 1.0),
            guidance=guidance,
            embedder=emb,
            lr=2e-3,
        ),
        pixel_sr=PixelSrStageConfig(
            in_height=32,
            in_width=20,
            unet=_toy_unet(in_channels=6, extra_cond_channels=3, scalar_cond=True),
            sampler=SamplerConfig("dpm_solver_pp_2m", 8, 1.0),
            guidance=guidance,
            embedder=emb,
            lr=2e-3,
            train_crop=(64, 40),
            train_frames=8,
        ),
        latent_sr=LatentSrStageConfig(
            in_height=128,
            in_width=80,
            out_height=288,
            out_width=160,
            unet=_toy_unet(in_channels=4, out_channels=4),
            sampler=SamplerConfig("ddim", 10, 1.0),
            guidance=GuidanceConfig(p_drop=0.1, guidance_scale=1.5),
            embedder=emb,
            lr=2e-3,
        ),
        vae=VAEConfig(),
    )
    validate_pipeline_config(cfg)
    return cfg


def paper_config(seed: int = 0) -> PipelineConfig:
    emb = EmbedderConfig()
    guidance = GuidanceConfig(p_drop=0.1, guidance_scale=7.5)
    big = dict(head_channels=64, cross_attention_dim=64, max_frames=32)
    cfg = PipelineConfig(
        name="paper",
        seed=seed,
        keyframe=KeyframeStageConfig(
            height=64,
            width=40,
            fps=2,
            unet=UNetConfig(
                base_channels=320, depth=4, channel_multipliers=(1, 2, 4, 4), **big
            ),
            sampler=SamplerConfig("dpm_solver_pp_2m", 75, 1.0),
            guidance=guidance,
            embedder=emb,
            lr=1e-4,
        ),
        interpolation=InterpolationStageConfig(
            height=64,
            width=40,
            unet=UNetConfig(
                base_channels=320,
                depth=4,
                channel_multipliers=(1, 2, 4, 4),
                in_channels=7,
                extra_cond_channels=4,
                scalar_cond=True,
                **big,
            ),
            sampler=SamplerConfig("dpm_solver_pp_2m", 50, 1.0),
            guidance=guidance,
            embedder=emb,
            lr=1e-4,
        ),
        pixel_sr=PixelSrStageConfig(
            in_height=64,
            in_width=40,
            unet=UNetConfig(
                base_channels=128,
                depth=5,
                channel_multipliers=(1, 2, 4, 6, 6),
                in_channels=6,
                extra_cond_channels=3,
                scalar_cond=True,
                **big,
            ),
            sampler=SamplerConfig("dpm_solver_pp_2m", 125, 1.0),
            guidance=guidance,
            embedder=emb,
            lr=1e-4,
        ),
        latent_sr=LatentSrStageConfig(
            in_height=256,
            in_width=160,
            out_height=576,
            out_width=320,
            unet=UNetConfig(
                base_channels=320,
                depth=4,
                channel_multipliers=(1, 2, 4, 4),
                in_channels=4,
                out_channels=4,
                **big,
            ),
            schedule=ScheduleConfig(beta_start=0.0015, beta_end=0.0195),
            sampler=SamplerConfig("ddim", 40, 1.0),
            guidance=guidance,
            embedder=emb,
            lr=1e-4,
        ),
        vae=VAEConfig(),
    )
    validate_pipeline_config(cfg)
    return cfg


PRESETS = {"toy": toy_config, "paper": paper_config}


# ---------------------------------------------------------------------------
# JSON round trip (keys mirror the hyperparameter-table rows)


def _unet_to_json(u: UNetConfig) -> dict:
    return {
        "channels": u.base_channels,
        "depth": u.depth,
        "channel_multiplier": list(u.channel_multipliers),
        "head_channels": u.head_channels,
        "in_channels": u.in_channels,
        "out_channels": u.out_channels,
        "cross_attention_dim": u.cross_attention_dim,
        "extra_cond_channels": u.extra_cond_channels,
        "scalar_cond": u.scalar_cond,
        "attention_levels": list(u.attention_levels) if u.attention_levels else None,
        "max_frames": u.max_frames,
    }


def _unet_from_json(d: dict) -> UNetConfig:
    return UNetConfig(
        base_channels=d["channels"],
        depth=d["depth"],
        channel_multipliers=tuple(d["channel_multiplier"]),
        head_channels=d["head_channels"],
        in_channels=d["in_channels"],
        out_channels=d["out_channels"],
        cross_attention_dim=d["cross_attention_dim"],
        extra_cond_channels=d["extra_cond_channels"],
        scalar_cond=d["scalar_cond"],
        attention_levels=tuple(d["attention_levels"]) if d.get("attention_levels") else None,
        max_frames=d["max_frames"],
    )


def _common_to_json(cfg) -> dict:
    return {
        "fps": cfg.fps,
        **_unet_to_json(cfg.unet),
        "parameterization": cfg.param.value,
        "diffusion_steps": cfg.schedule.steps,
        "noise_schedule": cfg.schedule.kind,
        "beta_0": cfg.schedule.beta_start,
        "beta_T": cfg.schedule.beta_end,
        "sampler": SAMPLER_NAMES[cfg.sampler.kind],
        "steps": cfg.sampler.steps,
        "eta": cfg.sampler.eta,
        "p_drop": cfg.guidance.p_drop,
        "guidance_scale": cfg.guidance.guidance_scale,
        "learning_rate": cfg.lr,
        "embedder": {
            "kind": cfg.embedder.kind,
            "dim": cfg.embedder.dim,
            "length": cfg.embedder.length,
            "seed": cfg.embedder.seed,
        },
    }


def _common_from_json(d: dict) -> dict:
    e = d["embedder"]
    return {
        "fps": d["fps"],
        "unet": _unet_from_json(d),
        "param": Parameterization(d["parameterization"]),
        "schedule": ScheduleConfig(
            steps=d["diffusion_steps"],
            kind=d["noise_schedule"],
            beta_start=d["beta_0"],
            beta_end=d["beta_T"],
        ),
        "sampler": SamplerConfig(SAMPLER_KINDS[d["sampler"]], d["steps"], d["eta"]),
        "guidance": GuidanceConfig(p_drop=d["p_drop"], guidance_scale=d["guidance_scale"]),
        "embedder": EmbedderConfig(
            kind=e["kind"], dim=e["dim"], length=e["length"], seed=e["seed"]
        ),
        "lr": d["learning_rate"],
    }


def keyframe_to_json(cfg: KeyframeStageConfig) -> dict:
    return {"height": cfg.height, "width": cfg.width, "frames": cfg.frames, **_common_to_json(cfg)}


def keyframe_from_json(d: dict) -> KeyframeStageConfig:
    return KeyframeStageConfig(
        height=d["height"], width=d["width"], frames=d["frames"], **_common_from_json(d)
    )


def interpolation_to_json(cfg: InterpolationStageConfig) -> dict:
    return {
        "height": cfg.height,
        "width": cfg.width,
        "keyframes": cfg.keyframes,
        "frames": cfg.frames,
        "aug_level_inference": cfg.aug_level_inference,
        "aug_t_frac": cfg.aug_t_frac,
        "loss_masked_only": cfg.loss_masked_only,
        **_common_to_json(cfg),
    }


def interpolation_from_json(d: dict) -> InterpolationStageConfig:
    return InterpolationStageConfig(
        height=d["height"],
        width=d["width"],
        keyframes=d["keyframes"],
        frames=d["frames"],
        aug_level_inference=d["aug_level_inference"],
        aug_t_frac=d["aug_t_frac"],
        loss_masked_only=d["loss_masked_only"],
        **_common_from_json(d),
    )


def pixel_sr_to_json(cfg: PixelSrStageConfig) -> dict:
    return {
        "in_height": cfg.in_height,
        "in_width": cfg.in_width,
        "factor": cfg.factor,
        "frames": cfg.frames,
        "segments": cfg.segments,
        "snr_min": cfg.snr_min,
        "snr_max": cfg.snr_max,
        "snr_inference": cfg.snr_inference,
        "train_crop": list(cfg.train_crop) if cfg.train_crop else None,
        "train_frames": cfg.train_frames,
        **_common_to_json(cfg),
    }


def pixel_sr_from_json(d: dict) -> PixelSrStageConfig:
    return PixelSrStageConfig(
        in_height=d["in_height"],
        in_width=d["in_width"],
        factor=d["factor"],
        frames=d["frames"],
        segments=d["segments"],
        snr_min=d["snr_min"],
        snr_max=d["snr_max"],
        snr_inference=d["snr_inference"],
        train_crop=tuple(d["train_crop"]) if d.get("train_crop") else None,
        train_frames=d["train_frames"],
        **_common_from_json(d),
    )


def latent_sr_to_json(cfg: LatentSrStageConfig) -> dict:
    return {
        "in_height": cfg.in_height,
        "in_width": cfg.in_width,
        "out_height": cfg.out_height,
        "out_width": cfg.out_width,
        "frames": cfg.frames,
        "latent_channels": cfg.latent_channels,
        "expert_t_min": cfg.expert.t_min,
        "expert_t_max": cfg.expert.t_max,
        "t_start": cfg.t_start,
        **_common_to_json(cfg),
    }


def latent_sr_from_json(d: dict) -> LatentSrStageConfig:
    return LatentSrStageConfig(
        in_height=d["in_height"],
        in_width=d["in_width"],
        out_height=d["out_height"],
        out_width=d["out_width"],
        frames=d["frames"],
        latent_channels=d["latent_channels"],
        expert=TimestepRange(d["expert_t_min"], d["expert_t_max"]),
        t_start=d["t_start"],
        **_common_from_json(d),
    )


def vae_to_json(cfg: VAEConfig) -> dict:
    return {
        "latent_channels": cfg.latent_channels,
        "downsample_factor": cfg.downsample_factor,
        "channels": cfg.base_channels,
        "kl_weight": cfg.kl_weight,
        "recon_loss": cfg.recon_loss,
    }


def vae_from_json(d: dict) -> VAEConfig:
    return VAEConfig(
        latent_channels=d["latent_channels"],
        downsample_factor=d["downsample_factor"],
        base_channels=d["channels"],
        kl_weight=d["kl_weight"],
        recon_loss=d["recon_loss"],
    )


def pipeline_to_json(cfg: PipelineConfig) -> dict:
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "keyframe": keyframe_to_json(cfg.keyframe),
        "interpolation": interpolation_to_json(cfg.interpolation),
        "pixel_sr": pixel_sr_to_json(cfg.pixel_sr),
        "latent_sr": latent_sr_to_json(cfg.latent_sr),
        "vae": vae_to_json(cfg.vae),
    }


def pipeline_from_json(d: dict) -> PipelineConfig:
    cfg = PipelineConfig(
        name=d["name"],
        seed=d["seed"],
        keyframe=keyframe_from_json(d["keyframe"]),
        interpolation=interpolation_from_json(d["interpolation"]),
        pixel_sr=pixel_sr_from_json(d["pixel_sr"]),
        latent_sr=latent_sr_from_json(d["latent_sr"]),
        vae=vae_from_json(d["vae"]),
    )
    validate_pipeline_config(cfg)
    return cfg


def save_pipeline_config(cfg: PipelineConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(pipeline_to_json(cfg), indent=2, sort_keys=True))
    return path


def load_pipeline_config(path) -> PipelineConfig:
    return pipeline_from_json(json.loads(Path(path).read_text()))
