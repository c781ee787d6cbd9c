"""Forward/posterior diffusion math on a discrete linear-beta chain.

Timesteps are 1-based: t runs over {1..T_max} with the boundary convention
alpha_bar(0) = 1, so q(x_0 | x_0) is the identity and the step-1 posterior
collapses onto x0. Everything here is a pure function of explicit inputs;
noise enters only through caller-provided tensors or generator handles.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
from torch import Tensor


class Parameterization(str, Enum):
    """What the denoiser predicts: the noise, or the velocity
    v = sqrt(alpha_bar)*eps - sqrt(1-alpha_bar)*x0."""

    EPSILON = "epsilon"
    V = "v"


@dataclass(frozen=True)
class TimestepRange:
    """Inclusive training-timestep range; draws are uniform over it."""

    t_min: int = 1
    t_max: int = 1000

    def __post_init__(self):
        if not (1 <= self.t_min <= self.t_max):
            raise ValueError(f"invalid timestep range [{self.t_min}, {self.t_max}]")

    def draw(self, n: int, rng: torch.Generator) -> Tensor:
        t = torch.randint(self.t_min, self.t_max + 1, (n,), generator=rng)
        if t.min() < self.t_min or t.max() > self.t_max:
            raise AssertionError("timestep draw escaped the configured range")
        return t


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta_t / alpha_t / alpha_bar_t / posterior-variance tables.

    Arrays are float64 and indexed by t-1 (``betas[0]`` is beta_1). Immutable
    after construction; safe to share across threads.
    """

    betas: Tensor
    alphas: Tensor
    alpha_bars: Tensor
    posterior_vars: Tensor
    schedule_kind: str = "linear"

    @property
    def T_max(self) -> int:
        return len(self.betas)

    def _check_t(self, t) -> None:
        lo = int(t.min()) if torch.is_tensor(t) else int(t)
        hi = int(t.max()) if torch.is_tensor(t) else int(t)
        if lo < 1 or hi > self.T_max:
            raise ValueError(f"timestep {t} outside [1, {self.T_max}]")

    def beta(self, t):
        self._check_t(t)
        return _lookup(self.betas, t, offset=1)

    def alpha(self, t):
        self._check_t(t)
        return _lookup(self.alphas, t, offset=1)

    def alpha_bar(self, t):
        """alpha_bar_t with alpha_bar_0 := 1."""
        ext = torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bars])
        return _lookup(ext, t, offset=0)

    def posterior_var(self, t):
        """Variance of q(x_{t-1} | x_t, x0); zero at t = 1."""
        self._check_t(t)
        return _lookup(self.posterior_vars, t, offset=1)


def _lookup(table: Tensor, t, offset: int):
    if torch.is_tensor(t):
        return table[t.long() - offset]
    return float(table[int(t) - offset])


def _coef(value, like: Tensor):
    """Broadcast a scalar float or per-batch tensor against ``like``."""
    if torch.is_tensor(value):
        shape = (-1,) + (1,) * (like.ndim - 1)
        return value.reshape(shape).to(like.dtype)
    return value


def build_linear_schedule(T_max: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas from beta_start to beta_end inclusive."""
    if T_max < 1:
        raise ValueError(f"T_max must be >= 1, got {T_max}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = torch.linspace(beta_start, beta_end, T_max, dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    alpha_bars_prev = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bars[:-1]])
    posterior_vars = (1.0 - alpha_bars_prev) / (1.0 - alpha_bars) * betas
    if not (alpha_bars.diff() < 0).all():
        raise ValueError("alpha_bars must be strictly decreasing")
    return NoiseSchedule(
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_vars=posterior_vars,
    )


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {what} {tuple(a.shape)} vs {tuple(b.shape)}")


def q_sample(x0: Tensor, t, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Closed-form forward marginal: sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps."""
    _require_same_shape(x0, eps, "x0 vs eps")
    sched._check_t(t)
    a = _coef(sched.alpha_bar(t), x0)
    if torch.is_tensor(a):
        return a.sqrt() * x0 + (1.0 - a).sqrt() * eps
    return a**0.5 * x0 + (1.0 - a) ** 0.5 * eps


def iterated_forward(x0: Tensor, t: int, rng: torch.Generator, sched: NoiseSchedule) -> Tensor:
    """Apply the single-step kernel q(x_s | x_{s-1}) t times.

    Marginally equivalent to one q_sample call at t; kept as the slow
    reference path for checking that equivalence.
    """
    sched._check_t(t)
    x = x0
    for s in range(1, int(t) + 1):
        beta = sched.beta(s)
        noise = torch.randn(x.shape, generator=rng, dtype=x.dtype)
        x = (1.0 - beta) ** 0.5 * x + beta**0.5 * noise
    return x


def posterior_params(x_t: Tensor, x0: Tensor, t: int, sched: NoiseSchedule):
    """Mean and variance of the true posterior q(x_{t-1} | x_t, x0).

    mean = sqrt(ab_{t-1}) beta_t / (1-ab_t) * x0
         + sqrt(a_t) (1-ab_{t-1}) / (1-ab_t) * x_t
    """
    _require_same_shape(x_t, x0, "x_t vs x0")
    sched._check_t(t)
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t - 1) if int(t) > 1 else 1.0
    beta = sched.beta(t)
    alpha = sched.alpha(t)
    coef_x0 = ab_prev**0.5 * beta / (1.0 - ab_t)
    coef_xt = alpha**0.5 * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0 + coef_xt * x_t
    return mean, sched.posterior_var(t)


def compute_v(x0: Tensor, eps: Tensor, t, sched: NoiseSchedule) -> Tensor:
    """v-target: sqrt(ab_t)*eps - sqrt(1-ab_t)*x0."""
    _require_same_shape(x0, eps, "x0 vs eps")
    ab = sched.alpha_bar(t)
    a = _coef(ab, x0)
    if torch.is_tensor(a):
        return a.sqrt() * eps - (1.0 - a).sqrt() * x0
    return a**0.5 * eps - (1.0 - a) ** 0.5 * x0


def predict_x0(
    model_out: Tensor, x_t: Tensor, t, param: Parameterization, sched: NoiseSchedule
) -> Tensor:
    """Invert the forward marginal to an x0 estimate from the model output."""
    _require_same_shape(model_out, x_t, "model_out vs x_t")
    ab = sched.alpha_bar(t)
    a = _coef(ab, x_t)
    kind = Parameterization(param)
    if torch.is_tensor(a):
        sq, sq1m = a.sqrt(), (1.0 - a).sqrt()
    else:
        sq, sq1m = a**0.5, (1.0 - a) ** 0.5
    if kind is Parameterization.EPSILON:
        return (x_t - sq1m * model_out) / sq
    if kind is Parameterization.V:
        return sq * x_t - sq1m * model_out
    raise ValueError(f"unknown parameterization {param!r}")


def predict_eps(x0_hat: Tensor, x_t: Tensor, t, sched: NoiseSchedule) -> Tensor:
    """Noise estimate implied by an x0 estimate at time t."""
    ab = sched.alpha_bar(t)
    a = _coef(ab, x_t)
    if torch.is_tensor(a):
        return (x_t - a.sqrt() * x0_hat) / (1.0 - a).sqrt()
    return (x_t - a**0.5 * x0_hat) / (1.0 - a) ** 0.5


def denoising_loss(x0: Tensor, t, eps: Tensor, cond, model, param: Parameterization,
                   sched: NoiseSchedule) -> Tensor:
    """MSE between the model output and the parameterization's target."""
    x_t = q_sample(x0, t, eps, sched)
    kind = Parameterization(param)
    target = eps if kind is Parameterization.EPSILON else compute_v(x0, eps, t, sched)
    out = model(x_t, t, cond)
    _require_same_shape(out, target, "model output vs target")
    return torch.mean((out - target) ** 2)
