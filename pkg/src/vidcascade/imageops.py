"""Deterministic per-frame resampling primitives.

The bilinear convention is pinned: output pixel (i, j) samples the source at
((i + 0.5) * in/out - 0.5, (j + 0.5) * in/out - 0.5) with edge clamping.
Area downsampling is the exact box average (supports fractional factors),
used to derive low-resolution training targets from rendered clips.
"""
from __future__ import annotations

import math

import torch
from torch import Tensor


def _bilinear_axis(n_in: int, n_out: int):
    i = torch.arange(n_out, dtype=torch.float64)
    src = (i + 0.5) * (n_in / n_out) - 0.5
    lo = torch.floor(src)
    frac = src - lo
    lo_c = lo.clamp(0, n_in - 1).long()
    hi_c = (lo + 1).clamp(0, n_in - 1).long()
    return lo_c, hi_c, frac


def bilinear_resize(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Separable bilinear resample of the trailing two axes."""
    oh, ow = out_hw
    if oh < 1 or ow < 1:
        raise ValueError(f"invalid output size {out_hw}")
    h, w = x.shape[-2:]
    r0, r1, wr = _bilinear_axis(h, oh)
    c0, c1, wc = _bilinear_axis(w, ow)
    v = x.double()
    v = v[..., r0, :] * (1.0 - wr)[:, None] + v[..., r1, :] * wr[:, None]
    v = v[..., c0] * (1.0 - wc) + v[..., c1] * wc
    return v.to(x.dtype)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Integer-factor bilinear upscale of the trailing two axes."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be an integer >= 1, got {factor}")
    h, w = x.shape[-2:]
    if factor == 1:
        return x.clone()
    return bilinear_resize(x, (h * int(factor), w * int(factor)))


def _area_weights(n_in: int, n_out: int) -> Tensor:
    """(n_out, n_in) overlap fractions of output cells against input cells."""
    scale = n_in / n_out
    w = torch.zeros(n_out, n_in, dtype=torch.float64)
    for i in range(n_out):
        start, end = i * scale, (i + 1) * scale
        for j in range(int(start), min(math.ceil(end), n_in)):
            w[i, j] = min(end, j + 1) - max(start, j)
    return w / scale


def area_downsample(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Exact box-average resample; output dims must not exceed input dims."""
    oh, ow = out_hw
    h, w = x.shape[-2:]
    if oh > h or ow > w or oh < 1 or ow < 1:
        raise ValueError(f"cannot area-downsample ({h},{w}) to ({oh},{ow})")
    wh = _area_weights(h, oh)
    ww = _area_weights(w, ow)
    out = torch.einsum("oh,...hw,pw->...op", wh, x.double(), ww)
    return out.to(x.dtype)


def luminance(x: Tensor) -> Tensor:
    """Rec. 601 luma of an (..., 3, H, W) tensor."""
    r, g, b = x[..., 0, :, :], x[..., 1, :, :], x[..., 2, :, :]
    return 0.299 * r + 0.587 * g + 0.114 * b
