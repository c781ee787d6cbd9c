"""Factorized spatio-temporal UNet.

A 2D image UNet whose spatial layers see frames as batch entries, with a
temporal 1D-conv block appended after every residual block and a temporal
attention layer appended after every self/cross attention pair. All temporal
output projections start at zero, so a fresh model is exactly the per-frame
2D network; temporal structure is learned on top of that identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from einops import rearrange, repeat
from torch import Tensor, nn

from .conditioning import TextEmbedding

TEMPORAL_MODES = ("full", "conv_only", "none")


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 3
    base_channels: int = 32
    depth: int = 3
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    head_channels: int = 8
    cross_attention_dim: int = 64
    extra_cond_channels: int = 0
    scalar_cond: bool = False
    # None: attention everywhere below full resolution (plus the middle block).
    attention_levels: tuple[int, ...] | None = None
    max_frames: int = 32

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.channel_multipliers) != self.depth:
            raise ValueError(
                f"need {self.depth} channel multipliers, got {len(self.channel_multipliers)}"
            )
        if self.extra_cond_channels not in (0, 3, 4):
            raise ValueError(f"extra_cond_channels must be 0, 3 or 4, got {self.extra_cond_channels}")
        if self.in_channels != self.out_channels + self.extra_cond_channels:
            raise ValueError(
                f"in_channels ({self.in_channels}) must equal out_channels "
                f"({self.out_channels}) + extra_cond_channels ({self.extra_cond_channels})"
            )
        for i in self.attn_levels:
            ch = self.base_channels * self.channel_multipliers[i]
            if ch % self.head_channels or ch < self.head_channels:
                raise ValueError(
                    f"level {i} channels {ch} not divisible into heads of {self.head_channels}"
                )

    @property
    def attn_levels(self) -> tuple[int, ...]:
        if self.attention_levels is not None:
            levels = tuple(self.attention_levels)
            if any(not (0 <= i < self.depth) for i in levels):
                raise ValueError(f"attention level out of range: {levels}")
            return levels
        return tuple(range(1, self.depth))

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> Tensor:
    """Sinusoidal embedding, sin half then cos half; t may be a scalar or (B,)."""
    scalar = not torch.is_tensor(t)
    tt = torch.as_tensor(t, dtype=torch.float32).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = tt[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb[0] if scalar else emb


def _groups(ch: int) -> int:
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


def _zero_init(module: nn.Module) -> nn.Module:
    nn.init.zeros_(module.weight)
    if module.bias is not None:
        nn.init.zeros_(module.bias)
    return module


class ResBlock2D(nn.Module):
    """GroupNorm/SiLU/conv residual block with an additive embedding bias."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class TemporalConvBlock(nn.Module):
    """Four stacked 1D convolutions over the frame axis, one residual around
    the stack; the last conv is zero-initialized so the block starts as the
    identity. No normalization inside: the stack must stay frame-local, and
    its receptive field is exactly +/- 4 frames."""

    def __init__(self, ch: int):
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv1d(ch, ch, 3, padding=1) for _ in range(4))
        _zero_init(self.convs[-1])

    def forward(self, x: Tensor) -> Tensor:
        # x: (B, F, C, H, W); convolve over F at each spatial location
        b = x.shape[0]
        h = rearrange(x, "b f c h w -> (b h w) c f")
        h = self.convs[0](h)
        for conv in self.convs[1:]:
            h = conv(F.silu(h))
        h = rearrange(h, "(b hh ww) c f -> b f c hh ww", b=b, hh=x.shape[3], ww=x.shape[4])
        return x + h


def _attend(q: Tensor, k: Tensor, v: Tensor, heads: int, bias: Tensor | None = None) -> Tensor:
    q, k, v = (rearrange(t, "n s (h d) -> n h s d", h=heads) for t in (q, k, v))
    out = F.scaled_dot_product_attention(q, k, v, attn_mask=bias)
    return rearrange(out, "n h s d -> n s (h d)")


class SpatialSelfAttention(nn.Module):
    def __init__(self, ch: int, head_ch: int):
        super().__init__()
        self.heads = ch // head_ch
        self.norm = nn.LayerNorm(ch)
        self.qkv = nn.Linear(ch, 3 * ch)
        self.proj = nn.Linear(ch, ch)

    def forward(self, x: Tensor) -> Tensor:
        # x: (N, C, H, W) with one frame per batch entry
        n, c, hh, ww = x.shape
        t = rearrange(x, "n c h w -> n (h w) c")
        q, k, v = self.qkv(self.norm(t)).chunk(3, dim=-1)
        t = t + self.proj(_attend(q, k, v, self.heads))
        return rearrange(t, "n (h w) c -> n c h w", h=hh, w=ww)


class CrossAttention(nn.Module):
    def __init__(self, ch: int, head_ch: int, ctx_dim: int):
        super().__init__()
        self.heads = ch // head_ch
        self.norm = nn.LayerNorm(ch)
        self.to_q = nn.Linear(ch, ch)
        self.to_k = nn.Linear(ctx_dim, ch)
        self.to_v = nn.Linear(ctx_dim, ch)
        self.proj = nn.Linear(ch, ch)

    def forward(self, x: Tensor, ctx: Tensor) -> Tensor:
        # x: (N, C, H, W); ctx: (N, L, ctx_dim)
        n, c, hh, ww = x.shape
        t = rearrange(x, "n c h w -> n (h w) c")
        q = self.to_q(self.norm(t))
        k, v = self.to_k(ctx), self.to_v(ctx)
        t = t + self.proj(_attend(q, k, v, self.heads))
        return rearrange(t, "n (h w) c -> n c h w", h=hh, w=ww)


class TemporalAttention(nn.Module):
    """Full attention over the frame axis at each spatial location, with a
    learned relative positional bias over frame offsets; zero-initialized
    output projection."""

    def __init__(self, ch: int, head_ch: int, max_frames: int):
        super().__init__()
        self.heads = ch // head_ch
        self.max_frames = max_frames
        self.norm = nn.LayerNorm(ch)
        self.qkv = nn.Linear(ch, 3 * ch)
        self.proj = _zero_init(nn.Linear(ch, ch))
        self.pos_bias = nn.Parameter(torch.zeros(self.heads, 2 * max_frames - 1))

    def _bias(self, frames: int, dtype) -> Tensor:
        if frames > self.max_frames:
            raise ValueError(f"{frames} frames exceeds max_frames={self.max_frames}")
        idx = torch.arange(frames)
        rel = idx[:, None] - idx[None, :] + self.max_frames - 1
        return self.pos_bias[:, rel].to(dtype)

    def forward(self, x: Tensor) -> Tensor:
        # x: (B, F, C, H, W)
        b, f = x.shape[:2]
        t = rearrange(x, "b f c h w -> (b h w) f c")
        q, k, v = self.qkv(self.norm(t)).chunk(3, dim=-1)
        out = self.proj(_attend(q, k, v, self.heads, bias=self._bias(f, t.dtype)))
        out = rearrange(out, "(b hh ww) f c -> b f c hh ww", b=b, hh=x.shape[3], ww=x.shape[4])
        return x + out


class AttentionBlock(nn.Module):
    """Self-attention, cross-attention, then temporal attention."""

    def __init__(self, ch: int, head_ch: int, ctx_dim: int, max_frames: int):
        super().__init__()
        self.self_attn = SpatialSelfAttention(ch, head_ch)
        self.cross_attn = CrossAttention(ch, head_ch, ctx_dim)
        self.temporal_attn = TemporalAttention(ch, head_ch, max_frames)

    def forward(self, x: Tensor, ctx: Tensor, frames: int, temporal: str) -> Tensor:
        x = self.self_attn(x)
        x = self.cross_attn(x, ctx)
        if temporal == "full":
            v = rearrange(x, "(b f) c h w -> b f c h w", f=frames)
            x = rearrange(self.temporal_attn(v), "b f c h w -> (b f) c h w")
        return x


class Downsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class _Level(nn.Module):
    def __init__(self, in_ch: int, ch: int, emb_dim: int, cfg: UNetConfig, with_attn: bool):
        super().__init__()
        self.res = ResBlock2D(in_ch, ch, emb_dim)
        self.temporal_conv = TemporalConvBlock(ch)
        self.attn = (
            AttentionBlock(ch, cfg.head_channels, cfg.cross_attention_dim, cfg.max_frames)
            if with_attn
            else None
        )

    def forward(self, x, emb, ctx, frames, temporal):
        x = self.res(x, emb)
        if temporal != "none":
            v = rearrange(x, "(b f) c h w -> b f c h w", f=frames)
            x = rearrange(self.temporal_conv(v), "b f c h w -> (b f) c h w")
        if self.attn is not None:
            x = self.attn(x, ctx, frames, temporal)
        return x


class VideoUNet(nn.Module):
    """Video denoiser over (frames, channels, height, width) clips.

    ``forward`` accepts a single clip or a batch of clips; spatial layers
    fold frames into the batch axis, temporal layers fold spatial locations
    into it. ``temporal`` selects the full model, convolution-only temporal
    mixing, or the bare per-frame 2D path.
    """

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        chs = cfg.level_channels
        emb_dim = 4 * cfg.base_channels
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_channels, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        if cfg.scalar_cond:
            self.scalar_mlp = nn.Sequential(
                nn.Linear(cfg.base_channels, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
            )
        self.stem = nn.Conv2d(cfg.in_channels, chs[0], 3, padding=1)

        attn = set(cfg.attn_levels)
        self.down_levels = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i, ch in enumerate(chs):
            if i > 0:
                self.downsamples.append(Downsample(chs[i - 1], ch))
            self.down_levels.append(_Level(ch, ch, emb_dim, cfg, i in attn))

        mid_ch = chs[-1]
        self.mid_a = _Level(mid_ch, mid_ch, emb_dim, cfg, with_attn=True)
        self.mid_b = _Level(mid_ch, mid_ch, emb_dim, cfg, with_attn=False)

        self.up_levels = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i, ch in reversed(list(enumerate(chs))):
            self.up_levels.append(_Level(2 * ch, ch, emb_dim, cfg, i in attn))
            if i > 0:
                self.upsamples.append(Upsample(ch, chs[i - 1]))

        self.out_norm = nn.GroupNorm(_groups(chs[0]), chs[0])
        self.out_conv = _zero_init(nn.Conv2d(chs[0], cfg.out_channels, 3, padding=1))

    def _embedding(self, t, scalar, batch: int, dtype) -> Tensor:
        tt = torch.as_tensor(t, dtype=torch.float32).reshape(-1)
        if tt.numel() == 1:
            tt = tt.expand(batch)
        emb = self.time_mlp(timestep_embedding(tt, self.cfg.base_channels).to(dtype))
        if self.cfg.scalar_cond:
            s = torch.as_tensor(0.0 if scalar is None else scalar, dtype=torch.float32)
            s = s.reshape(-1)
            if s.numel() == 1:
                s = s.expand(batch)
            # small physical values (aug level, SNR) are stretched across the
            # sinusoidal bands
            emb = emb + self.scalar_mlp(timestep_embedding(s * 100.0, self.cfg.base_channels).to(dtype))
        elif scalar is not None:
            raise ValueError("model was built without scalar conditioning")
        return emb

    def forward(self, x: Tensor, t, cond, scalar=None, temporal: str = "full") -> Tensor:
        if temporal not in TEMPORAL_MODES:
            raise ValueError(f"temporal must be one of {TEMPORAL_MODES}")
        squeeze = x.ndim == 4
        if squeeze:
            x = x[None]
        if x.ndim != 5:
            raise ValueError(f"expected (frames,C,H,W) or (B,frames,C,H,W), got {tuple(x.shape)}")
        b, frames, c, hh, ww = x.shape
        cfg = self.cfg
        if c != cfg.in_channels:
            raise ValueError(f"expected {cfg.in_channels} input channels, got {c}")
        div = 2 ** (cfg.depth - 1)
        if hh % div or ww % div:
            raise ValueError(f"spatial dims ({hh},{ww}) must be divisible by {div}")

        if isinstance(cond, TextEmbedding):
            ctx = cond.tokens
        else:
            ctx = cond
        if ctx.ndim == 2:
            ctx = ctx[None].expand(b, -1, -1)
        if ctx.shape[-1] != cfg.cross_attention_dim:
            raise ValueError(
                f"conditioning dim {ctx.shape[-1]} != cross_attention_dim {cfg.cross_attention_dim}"
            )

        emb = self._embedding(t, scalar, b, x.dtype)
        emb_f = repeat(emb, "b e -> (b f) e", f=frames)
        ctx_f = repeat(ctx.to(x.dtype), "b l d -> (b f) l d", f=frames)

        h = rearrange(x, "b f c h w -> (b f) c h w")
        h = self.stem(h)
        skips = []
        for i, level in enumerate(self.down_levels):
            if i > 0:
                h = self.downsamples[i - 1](h)
            h = level(h, emb_f, ctx_f, frames, temporal)
            skips.append(h)

        h = self.mid_a(h, emb_f, ctx_f, frames, temporal)
        h = self.mid_b(h, emb_f, ctx_f, frames, temporal)

        for j, level in enumerate(self.up_levels):
            h = torch.cat([h, skips.pop()], dim=1)
            h = level(h, emb_f, ctx_f, frames, temporal)
            if j < len(self.upsamples):
                h = self.upsamples[j](h)

        h = self.out_conv(F.silu(self.out_norm(h)))
        out = rearrange(h, "(b f) c h w -> b f c h w", f=frames)
        return out[0] if squeeze else out


def build_video_unet(cfg: UNetConfig) -> VideoUNet:
    return VideoUNet(cfg)
