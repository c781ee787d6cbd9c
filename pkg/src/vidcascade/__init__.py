"""vidcascade: a desk-scale hybrid pixel/latent text-to-video diffusion
cascade (keyframes, temporal interpolation, pixel super-resolution, latent
expert super-resolution)."""

from .conditioning import (
    GuidanceConfig,
    TextEmbedding,
    ToyTextEmbedder,
    cfg_combine,
    cfg_dropout,
    embed_text,
)
from .config import (
    EmbedderConfig,
    InterpolationStageConfig,
    KeyframeStageConfig,
    LadderError,
    LatentSrStageConfig,
    PipelineConfig,
    PixelSrStageConfig,
    ScheduleConfig,
    load_pipeline_config,
    paper_config,
    save_pipeline_config,
    toy_config,
    validate_pipeline_config,
)
from .diffusion import (
    NoiseSchedule,
    Parameterization,
    TimestepRange,
    build_linear_schedule,
    compute_v,
    denoising_loss,
    iterated_forward,
    posterior_params,
    predict_eps,
    predict_x0,
    q_sample,
)
from .pipeline import PipelineResult, run_pipeline, shape_trace
from .rng import RngStreams
from .samplers import (
    SamplerConfig,
    SolverState,
    ancestral_step,
    ddim_step,
    dpm_solver_pp_step,
    run_sampler,
    sampling_timesteps,
)
from .unet import UNetConfig, VideoUNet, build_video_unet, timestep_embedding
from .vae import FrameVAE, VAEConfig, train_vae, vae_decode, vae_encode

__version__ = "0.1.0"
