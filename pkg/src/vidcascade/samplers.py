"""Reverse-process steppers: ancestral DDPM, DDIM, and DPM-Solver++(2M).

All steppers consume an x0 estimate (the caller owns parameterization
conversion and guidance) and move the sample from timestep t to t_prev,
with t_prev = 0 meaning the data endpoint (alpha_bar_0 = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .diffusion import NoiseSchedule, posterior_params, predict_eps

SAMPLER_KINDS = ("ancestral_ddpm", "ddim", "dpm_solver_pp_2m")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddim"
    steps: int = 50
    eta: float = 0.0
    timestep_spacing: str = "uniform_trailing"

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.timestep_spacing != "uniform_trailing":
            raise ValueError(f"unknown spacing {self.timestep_spacing!r}")


def sampling_timesteps(t_hi: int, steps: int) -> list[int]:
    """Descending timestep grid from t_hi down to 0, uniformly spaced.

    The grid trails at 0: the final transition always targets the data
    endpoint. With steps == t_hi this is the full adjacent chain.
    """
    if not (1 <= steps <= t_hi):
        raise ValueError(f"need 1 <= steps <= {t_hi}, got {steps}")
    ts = [round(t_hi * i / steps) for i in range(steps, 0, -1)] + [0]
    if any(nxt >= prev for prev, nxt in zip(ts, ts[1:])):
        raise ValueError(f"degenerate timestep grid {ts}")
    return ts


def _check_step_pair(t: int, t_prev: int, sched: NoiseSchedule) -> None:
    if not (0 <= t_prev < t <= sched.T_max):
        raise ValueError(f"invalid step pair t={t}, t_prev={t_prev}")


def ddim_sigma(t: int, t_prev: int, eta: float, sched: NoiseSchedule) -> float:
    """DDIM noise scale; at eta = 1 it equals the ancestral posterior std."""
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    return eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev))


def ddim_step(
    x_t: Tensor,
    x0_hat: Tensor,
    t: int,
    t_prev: int,
    eta: float,
    rng: torch.Generator,
    sched: NoiseSchedule,
) -> Tensor:
    _check_step_pair(t, t_prev, sched)
    if eta < 0:
        raise ValueError("eta must be >= 0")
    ab_prev = sched.alpha_bar(t_prev)
    sigma = ddim_sigma(t, t_prev, eta, sched)
    eps_hat = predict_eps(x0_hat, x_t, t, sched)
    direction = math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_hat
    x_prev = math.sqrt(ab_prev) * x0_hat + direction
    if sigma > 0:
        x_prev = x_prev + sigma * torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype)
    return x_prev


def ancestral_step(
    x_t: Tensor, x0_hat: Tensor, t: int, rng: torch.Generator, sched: NoiseSchedule
) -> Tensor:
    """Sample from N(posterior mean, posterior var); exact mean at t = 1."""
    mean, var = posterior_params(x_t, x0_hat, t, sched)
    if var > 0:
        return mean + math.sqrt(var) * torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype)
    return mean


@dataclass
class SolverState:
    """Current sample plus the trailing x0 predictions a multistep solver needs."""

    x: Tensor
    preds: list[tuple[int, Tensor]] = field(default_factory=list)

    def push(self, t: int, x0_hat: Tensor) -> None:
        self.preds.append((t, x0_hat))
        if len(self.preds) > 2:
            self.preds.pop(0)


def _log_snr(t: int, sched: NoiseSchedule) -> float:
    ab = sched.alpha_bar(t)
    return 0.5 * math.log(ab / (1.0 - ab))


def dpm_solver_pp_step(state: SolverState, t: int, t_prev: int, sched: NoiseSchedule) -> Tensor:
    """DPM-Solver++(2M) update in log-SNR coordinates.

    Second order once two x0 predictions are buffered; the first step and
    the final step to t_prev = 0 are first order (the latter returns the
    current prediction exactly, since sigma_0 = 0).
    """
    _check_step_pair(t, t_prev, sched)
    if not state.preds:
        raise ValueError("solver history is empty")
    t_cur, x0_cur = state.preds[-1]
    if t_cur != t:
        raise ValueError(f"newest prediction is for t={t_cur}, stepping from t={t}")
    if t_prev == 0:
        return x0_cur.clone()

    ab_t, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t_prev)
    sigma_t, sigma_prev = math.sqrt(1.0 - ab_t), math.sqrt(1.0 - ab_prev)
    alpha_prev = math.sqrt(ab_prev)
    h = _log_snr(t_prev, sched) - _log_snr(t, sched)

    update = x0_cur
    if len(state.preds) >= 2:
        t_old, x0_old = state.preds[-2]
        h_old = _log_snr(t, sched) - _log_snr(t_old, sched)
        r = h_old / h
        d1 = (x0_cur - x0_old) / r
        update = x0_cur + 0.5 * d1
    return (sigma_prev / sigma_t) * state.x - alpha_prev * math.expm1(-h) * update


def run_sampler(
    denoise,
    shape,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    rng: torch.Generator,
    x_init: Tensor | None = None,
    t_start: int | None = None,
) -> Tensor:
    """Drive a full reverse chain: x at t_start (pure noise by default) -> x0.

    ``denoise(x_t, t)`` must return an x0 estimate; guidance and
    parameterization conversion live inside that callable.
    """
    t_hi = sched.T_max if t_start is None else int(t_start)
    if not (1 <= t_hi <= sched.T_max):
        raise ValueError(f"t_start {t_hi} outside [1, {sched.T_max}]")
    steps = min(cfg.steps, t_hi)
    if cfg.kind == "ancestral_ddpm" and steps != t_hi:
        raise ValueError(
            f"ancestral sampling needs adjacent steps: steps={cfg.steps}, chain length {t_hi}"
        )
    if x_init is not None:
        x = x_init
    else:
        x = torch.randn(shape, generator=rng)
    ts = sampling_timesteps(t_hi, steps)
    state = SolverState(x=x)
    for t, t_prev in zip(ts[:-1], ts[1:]):
        x0_hat = denoise(x, t)
        if cfg.kind == "ancestral_ddpm":
            x = ancestral_step(x, x0_hat, t, rng, sched)
        elif cfg.kind == "ddim":
            x = ddim_step(x, x0_hat, t, t_prev, cfg.eta, rng, sched)
        else:
            state.x = x
            state.push(t, x0_hat)
            x = dpm_solver_pp_step(state, t, t_prev, sched)
    return x
