"""Command-line interface.

Subcommands: ``dataset gen``, ``vae train``, ``train <stage>``,
``sample <stage>``, ``pipeline run``, ``pipeline trace``. The default output
root comes from $VIDCASCADE_OUT (falling back to ./outputs).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, PipelineConfig, load_pipeline_config
from .data import ClipDataset, generate_synthetic_dataset
from .pipeline import run_pipeline, shape_trace
from .rng import RngStreams
from .stages.common import init_stage_model
from .stages.interpolation import sample_interpolation, train_interpolation
from .stages.keyframe import sample_keyframes, train_keyframe
from .stages.latent_sr import sdedit_upscale, train_expert
from .stages.pixel_sr import sample_sr_stitched, train_pixel_sr
from .vae import train_vae
from .videoio import export_video, import_video

STAGES = ("keyframe", "interpolation", "pixel_sr", "latent_sr")


def _out_root() -> Path:
    return Path(os.environ.get("VIDCASCADE_OUT", "outputs"))


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_pipeline_config(args.config)
    return PRESETS[args.preset](seed=args.seed)


def _dataset_views(cfg: PipelineConfig, root, stage: str) -> ClipDataset:
    """The dataset resolution/stride view a given stage trains on."""
    if stage == "keyframe":
        return ClipDataset(root, resolution=(cfg.keyframe.height, cfg.keyframe.width), stride=4)
    if stage == "interpolation":
        return ClipDataset(root, resolution=(cfg.interpolation.height, cfg.interpolation.width))
    if stage == "pixel_sr":
        return ClipDataset(root, resolution=(cfg.pixel_sr.out_height, cfg.pixel_sr.out_width))
    if stage == "latent_sr":
        return ClipDataset(root, resolution=(cfg.latent_sr.out_height, cfg.latent_sr.out_width))
    raise ValueError(stage)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON (overrides --preset)")
    p.add_argument("--preset", default="toy", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default under $VIDCASCADE_OUT)")


def _cmd_dataset_gen(args) -> int:
    out = Path(args.out) if args.out else _out_root() / "dataset"
    path = generate_synthetic_dataset(
        out, seed=args.seed, n_clips=args.clips,
        dims=(args.height, args.width), frames=args.frames,
    )
    print(f"wrote {args.clips} clips to {out} (manifest {path})")
    return 0


def _cmd_vae_train(args) -> int:
    cfg = _load_config(args)
    streams = RngStreams(args.seed)
    dataset = ClipDataset(args.dataset, split="train",
                          resolution=(cfg.latent_sr.out_height, cfg.latent_sr.out_width))
    bundle = train_vae(dataset, cfg.vae, steps=args.steps, rng=streams.torch("vae/train"))
    out = Path(args.out) if args.out else _out_root() / "checkpoints" / "vae.ckpt"
    save_checkpoint(bundle, out)
    print(f"vae checkpoint -> {out} (final recon loss {bundle.extras['loss_curve'][-1]:.5f})")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    streams = RngStreams(args.seed)
    dataset = _dataset_views(cfg, args.dataset, args.stage)
    rng = streams.torch(f"{args.stage}/train")
    clip_index = args.clip_index
    if args.stage == "keyframe":
        model = init_stage_model(cfg.keyframe.unet, args.seed, "keyframe")
        bundle = train_keyframe(dataset, model, cfg.keyframe, args.steps, rng,
                                stop_ratio=args.stop_ratio, clip_index=clip_index)
    elif args.stage == "interpolation":
        model = init_stage_model(cfg.interpolation.unet, args.seed, "interpolation")
        bundle = train_interpolation(dataset, model, cfg.interpolation, args.steps, rng,
                                     stop_ratio=args.stop_ratio, clip_index=clip_index)
    elif args.stage == "pixel_sr":
        model = init_stage_model(cfg.pixel_sr.unet, args.seed, "pixel_sr")
        bundle = train_pixel_sr(dataset, model, cfg.pixel_sr, args.steps, rng,
                                stop_ratio=args.stop_ratio, clip_index=clip_index)
    else:
        vae = _load_vae(args.vae)
        model = init_stage_model(cfg.latent_sr.unet, args.seed, "latent_sr")
        bundle = train_expert(dataset, model, vae, cfg.latent_sr, args.steps, rng,
                              stop_ratio=args.stop_ratio, clip_index=clip_index)
    out = Path(args.out) if args.out else _out_root() / "checkpoints" / f"{args.stage}.ckpt"
    save_checkpoint(bundle, out)
    curve = bundle.extras["loss_curve"]
    first = curve[0] if curve else float("nan")
    last = curve[-1] if curve else float("nan")
    print(f"{args.stage} checkpoint -> {out} (loss {first:.4f} -> {last:.4f}, "
          f"{bundle.extras['steps_run']} steps)")
    return 0


def _load_vae(path):
    from .checkpoint import build_model

    if not path:
        raise SystemExit("--vae checkpoint required for the latent stage")
    return build_model(load_checkpoint(path))


def _cmd_sample(args) -> int:
    streams = RngStreams(args.seed)
    bundle = load_checkpoint(args.checkpoint)
    rng = streams.torch(f"{args.stage}/sample")
    if args.stage == "keyframe":
        video = sample_keyframes(args.prompt, bundle, rng)
        fps = 2
    elif args.stage == "interpolation":
        keyframes = import_video(args.frames_dir)
        video = sample_interpolation(keyframes, bundle, rng, prompt=args.prompt)
        fps = 8
    elif args.stage == "pixel_sr":
        low = import_video(args.frames_dir)
        video = sample_sr_stitched(low, bundle, rng, prompt=args.prompt)
        fps = 8
    else:
        clip = import_video(args.frames_dir)
        vae = _load_vae(args.vae)
        video = sdedit_upscale(clip, bundle, vae, args.prompt, rng, t_start=args.t_start)
        fps = 8
    out = Path(args.out) if args.out else _out_root() / "samples" / args.stage
    export_video(video, out, fps=fps)
    print(f"{args.stage} sample {tuple(video.shape)} -> {out}")
    return 0


def _cmd_pipeline_run(args) -> int:
    cfg = _load_config(args)
    ckpt_dir = Path(args.checkpoints)
    checkpoints = {name: ckpt_dir / f"{name}.ckpt" for name in STAGES + ("vae",)}
    out = Path(args.out) if args.out else _out_root() / "pipeline"
    result = run_pipeline(args.prompt, checkpoints, cfg, RngStreams(args.seed), out_dir=out)
    for stage, tensor in result.tensors.items():
        print(f"{stage}: {tuple(tensor.shape)}")
    print(f"artifacts -> {out}")
    return 0


def _cmd_pipeline_trace(args) -> int:
    cfg = _load_config(args)
    for stage, shape in shape_trace(cfg):
        print(f"{stage}: {shape}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidcascade",
                                     description="hybrid pixel/latent text-to-video cascade")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="synthetic dataset commands")
    ds_sub = ds.add_subparsers(dest="subcommand", required=True)
    gen = ds_sub.add_parser("gen", help="generate moving-shape clips")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--clips", type=int, default=64)
    gen.add_argument("--height", type=int, default=288)
    gen.add_argument("--width", type=int, default=160)
    gen.add_argument("--frames", type=int, default=29)
    gen.add_argument("--out")
    gen.set_defaults(func=_cmd_dataset_gen)

    vae = sub.add_parser("vae", help="frame VAE commands")
    vae_sub = vae.add_subparsers(dest="subcommand", required=True)
    vt = vae_sub.add_parser("train")
    _add_common(vt)
    vt.add_argument("--dataset", required=True)
    vt.add_argument("--steps", type=int, default=3000)
    vt.set_defaults(func=_cmd_vae_train)

    tr = sub.add_parser("train", help="train one cascade stage")
    tr.add_argument("stage", choices=STAGES)
    _add_common(tr)
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--steps", type=int, default=2000)
    tr.add_argument("--stop-ratio", type=float, default=None,
                    help="early-stop once loss falls below this fraction of the initial loss")
    tr.add_argument("--clip-index", type=int, default=None,
                    help="train on a single dataset clip (overfit harness)")
    tr.add_argument("--vae", help="VAE checkpoint (latent_sr only)")
    tr.set_defaults(func=_cmd_train)

    sp = sub.add_parser("sample", help="sample from one stage checkpoint")
    sp.add_argument("stage", choices=STAGES)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--prompt", default=None)
    sp.add_argument("--frames-dir", help="input clip directory (non-keyframe stages)")
    sp.add_argument("--vae", help="VAE checkpoint (latent_sr only)")
    sp.add_argument("--t-start", type=int, default=None, help="SDEdit start timestep")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_sample)

    pl = sub.add_parser("pipeline", help="end-to-end generation")
    pl_sub = pl.add_subparsers(dest="subcommand", required=True)
    run = pl_sub.add_parser("run")
    _add_common(run)
    run.add_argument("--prompt", required=True)
    run.add_argument("--checkpoints", required=True,
                     help="directory holding <stage>.ckpt files and vae.ckpt")
    run.set_defaults(func=_cmd_pipeline_run)
    trace = pl_sub.add_parser("trace", help="print the resolution ladder only")
    _add_common(trace)
    trace.set_defaults(func=_cmd_pipeline_trace)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
