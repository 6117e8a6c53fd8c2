"""Loss-weight scheduling for the three-task objective."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .config import ConfigError, ScheduleConfig
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    qa: float
    ma: float
    tl: float

    def __post_init__(self):
        if min(self.qa, self.ma, self.tl) < 0:
            raise ConfigError(f"loss weights must be nonnegative: {self}")
        if max(self.qa, self.ma, self.tl) == 0:
            raise ConfigError("at least one loss weight must be positive")

    def as_tuple(self):
        return (self.qa, self.ma, self.tl)


@dataclass
class ScheduleSpec:
    """Ordered (step, weights) anchors plus an interpolation mode."""

    anchors: list  # [(step, LossWeights)]
    interpolation: str = "linear"

    def __post_init__(self):
        if not self.anchors:
            raise ConfigError("schedule needs at least one anchor")
        steps = [s for s, _ in self.anchors]
        if steps[0] != 0:
            raise ConfigError("first schedule anchor must sit at step 0")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError(f"anchor steps must strictly increase: {steps}")
        if self.interpolation not in ("linear", "step-wise"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "ScheduleSpec":
        anchors = [(int(step), LossWeights(*map(float, w))) for step, w in cfg.anchors]
        return cls(anchors=anchors, interpolation=cfg.interpolation)


def weights_at(spec: ScheduleSpec, step: int) -> LossWeights:
    """Weights for a training step.

    step-wise: last anchor at or before the step. linear: componentwise
    interpolation between the bracketing anchors. Past the final anchor
    the final weights hold.
    """
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    anchors = spec.anchors
    if step >= anchors[-1][0]:
        return anchors[-1][1]
    hi = next(i for i, (s, _) in enumerate(anchors) if s > step)
    s0, w0 = anchors[hi - 1]
    if spec.interpolation == "step-wise":
        return w0
    s1, w1 = anchors[hi]
    frac = (step - s0) / (s1 - s0)
    return LossWeights(*(a + (b - a) * frac for a, b in zip(w0.as_tuple(), w1.as_tuple())))


def total_loss(loss_qa: Tensor | None, loss_ma: Tensor | None, loss_tl: Tensor | None,
               weights: LossWeights) -> Tensor:
    """Weighted sum of the task losses; a None loss must carry zero weight."""
    terms = []
    for loss, alpha, name in ((loss_qa, weights.qa, "qa"),
                              (loss_ma, weights.ma, "ma"),
                              (loss_tl, weights.tl, "tl")):
        if loss is None:
            if alpha != 0.0:
                raise ConfigError(f"{name} loss missing but its weight is {alpha}")
            continue
        terms.append(T.scale(loss, alpha))
    if not terms:
        raise ConfigError("total_loss: no loss terms")
    out = terms[0]
    for t in terms[1:]:
        out = T.add(out, t)
    return out
