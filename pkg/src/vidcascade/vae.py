"""Per-frame convolutional VAE with 8x spatial compression.

Frames are encoded independently (no temporal coupling), so encoding
commutes with frame permutation. A post-training normalization scale maps
encoded latents to roughly unit variance for the latent diffusion stage.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .checkpoint import CheckpointBundle, state_to_numpy


@dataclass(frozen=True)
class VAEConfig:
    latent_channels: int = 4
    downsample_factor: int = 8
    base_channels: int = 32
    kl_weight: float = 1e-6
    recon_loss: str = "mse"

    def __post_init__(self):
        if self.downsample_factor != 8:
            raise ValueError("downsample_factor is fixed at 8")
        if self.recon_loss != "mse":
            raise ValueError(f"unsupported recon loss {self.recon_loss!r}")


def _block(in_ch: int, out_ch: int, stride: int = 1) -> list[nn.Module]:
    return [
        nn.Conv2d(in_ch, out_ch, 4 if stride == 2 else 3, stride=stride, padding=1),
        nn.GroupNorm(8, out_ch),
        nn.SiLU(),
    ]


class FrameVAE(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        self.cfg = cfg
        b, z = cfg.base_channels, cfg.latent_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(3, b, 3, padding=1),
            nn.SiLU(),
            *_block(b, 2 * b, stride=2),
            *_block(2 * b, 4 * b, stride=2),
            *_block(4 * b, 4 * b, stride=2),
            nn.Conv2d(4 * b, 2 * z, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(z, 4 * b, 3, padding=1),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            *_block(4 * b, 4 * b),
            nn.Upsample(scale_factor=2, mode="nearest"),
            *_block(4 * b, 2 * b),
            nn.Upsample(scale_factor=2, mode="nearest"),
            *_block(2 * b, b),
            nn.Conv2d(b, 3, 3, padding=1),
        )
        self.register_buffer("latent_scale", torch.ones(()))

    def _check_dims(self, x: Tensor) -> None:
        f = self.cfg.downsample_factor
        if x.shape[-2] % f or x.shape[-1] % f:
            raise ValueError(f"spatial dims {tuple(x.shape[-2:])} not divisible by {f}")

    def encode_params(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """Posterior (mu, logvar) for a batch of frames (N, 3, H, W)."""
        self._check_dims(frames)
        mu, logvar = self.encoder(frames).chunk(2, dim=1)
        return mu, logvar.clamp(-20.0, 10.0)

    def encode(self, x: Tensor) -> Tensor:
        """Deterministic scaled latent of an (F, 3, H, W) clip."""
        mu, _ = self.encode_params(x)
        return mu * self.latent_scale

    def decode(self, z: Tensor) -> Tensor:
        if z.shape[-3] != self.cfg.latent_channels:
            raise ValueError(f"expected {self.cfg.latent_channels} latent channels")
        return self.decoder(z / self.latent_scale)


def vae_encode(vae: FrameVAE, x: Tensor) -> Tensor:
    return vae.encode(x)


def vae_decode(vae: FrameVAE, z: Tensor) -> Tensor:
    return vae.decode(z)


def psnr(a: Tensor, b: Tensor, peak: float = 2.0) -> float:
    mse = float(torch.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def train_vae(
    dataset,
    cfg: VAEConfig,
    steps: int,
    rng: torch.Generator,
    lr: float = 1e-3,
    batch: int = 16,
    crop: int = 64,
) -> CheckpointBundle:
    """Train on random frame crops; returns a bundle with the fitted
    latent normalization scale."""
    torch.manual_seed(int(torch.randint(2**31 - 1, (1,), generator=rng)))
    model = FrameVAE(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    for _ in range(steps):
        frames = _sample_crops(dataset, batch, crop, rng)
        mu, logvar = model.encode_params(frames)
        eps = torch.randn(mu.shape, generator=rng)
        recon = model.decoder(mu + (0.5 * logvar).exp() * eps)
        rec_loss = F.mse_loss(recon, frames)
        kl = 0.5 * torch.mean(mu**2 + logvar.exp() - 1.0 - logvar)
        loss = rec_loss + cfg.kl_weight * kl
        if not torch.isfinite(loss):
            raise RuntimeError(f"VAE loss diverged at step {len(losses)}: {loss}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(rec_loss))
    with torch.no_grad():
        frames = _sample_crops(dataset, batch, crop, rng)
        mu, _ = model.encode_params(frames)
        std = float(mu.std())
        model.latent_scale.fill_(1.0 / max(std, 1e-6))
    return CheckpointBundle(
        stage="vae",
        model_kind="frame_vae",
        model_config=asdict(cfg),
        state=state_to_numpy(model),
        extras={"loss_curve": losses, "latent_std": std},
    )


def _sample_crops(dataset, batch: int, crop: int, rng: torch.Generator) -> Tensor:
    out = []
    for _ in range(batch):
        idx = int(torch.randint(len(dataset), (1,), generator=rng))
        clip, _ = dataset[idx]
        f = int(torch.randint(clip.shape[0], (1,), generator=rng))
        frame = clip[f]
        h, w = frame.shape[-2:]
        ch, cw = min(crop, h), min(crop, w)
        ch, cw = ch - ch % 8, cw - cw % 8
        oy = int(torch.randint(h - ch + 1, (1,), generator=rng))
        ox = int(torch.randint(w - cw + 1, (1,), generator=rng))
        out.append(frame[:, oy : oy + ch, ox : ox + cw])
    return torch.stack(out)
