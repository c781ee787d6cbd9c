"""Shared denoiser training loop: Adam, loss history, divergence guard,
periodic fixed-batch evaluation, optional early stop on an overfit target."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(
            f"non-finite loss {loss} at step {step}; last params left on the model "
            "for inspection"
        )
        self.step = step
        self.loss = loss


@dataclass
class TrainHistory:
    loss_curve: list[float] = field(default_factory=list)
    eval_points: list[tuple[int, float]] = field(default_factory=list)
    steps_run: int = 0

    @property
    def initial_loss(self) -> float:
        head = self.loss_curve[:5]
        return sum(head) / len(head) if head else float("nan")

    @property
    def final_loss(self) -> float:
        tail = self.loss_curve[-5:]
        return sum(tail) / len(tail) if tail else float("nan")


def _eval_steps(total: int) -> set[int]:
    steps = {0, total}
    k = 1
    while k < total:
        steps.add(k)
        k *= 2
    return steps


def train_loop(
    model: nn.Module,
    step_loss,
    steps: int,
    lr: float,
    eval_loss=None,
    stop_ratio: float | None = None,
    stop_window: int = 25,
) -> TrainHistory:
    """Run ``steps`` optimizer updates of ``step_loss()``.

    ``eval_loss()`` (if given) is measured without gradients at step 0,
    powers of two, and the last step. ``stop_ratio`` stops early once the
    mean of the trailing ``stop_window`` losses drops below
    stop_ratio * initial loss.
    """
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    history = TrainHistory()
    marks = _eval_steps(steps)

    def maybe_eval(step: int) -> None:
        if eval_loss is not None and step in marks:
            model.eval()
            with torch.no_grad():
                history.eval_points.append((step, float(eval_loss())))
            model.train()

    maybe_eval(0)
    model.train()
    for step in range(1, steps + 1):
        loss = step_loss()
        value = float(loss.detach())
        if not (value == value and abs(value) != float("inf")):
            raise TrainingDiverged(step, value)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.loss_curve.append(value)
        history.steps_run = step
        maybe_eval(step)
        if stop_ratio is not None and step >= max(stop_window, 5):
            tail = history.loss_curve[-stop_window:]
            if sum(tail) / len(tail) < stop_ratio * history.initial_loss:
                break
    if eval_loss is not None and (not history.eval_points or history.eval_points[-1][0] != history.steps_run):
        model.eval()
        with torch.no_grad():
            history.eval_points.append((history.steps_run, float(eval_loss())))
    model.train()
    return history
