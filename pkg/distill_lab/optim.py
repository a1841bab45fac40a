"""
SGD with classic momentum and coupled L2 weight decay, plus the step
learning-rate schedule.
"""

import bisect
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from distill_lab.errors import InvalidArgument, InvalidSpec, ShapeMismatch

# Milestones as fractions of the run: 80k/140k/210k/280k of a ~300k-iteration schedule
DEFAULT_MILESTONE_FRACTIONS = (0.27, 0.47, 0.70, 0.93)


@dataclass
class SgdState:
    momentum_buffers: List[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "SgdState":
        return cls([np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params])


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float
    milestones: Tuple[int, ...] = field(default_factory=tuple)
    decay_factor: float = 0.1

    def __post_init__(self):
        milestones = tuple(int(m) for m in self.milestones)
        object.__setattr__(self, "milestones", milestones)
        if not self.initial_lr > 0:
            raise InvalidSpec(f"Initial learning rate must be positive, got {self.initial_lr}")
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise InvalidSpec(f"Milestones must be strictly ascending, got {milestones}")
        if milestones and milestones[0] < 0:
            raise InvalidSpec("Milestones must be non-negative")
        if not 0 < self.decay_factor < 1:
            raise InvalidSpec(f"Decay factor must lie in (0, 1), got {self.decay_factor}")

    @classmethod
    def from_fractions(
        cls,
        initial_lr: float,
        total_iterations: int,
        fractions: Sequence[float] = DEFAULT_MILESTONE_FRACTIONS,
        decay_factor: float = 0.1,
    ) -> "LrSchedule":
        """Place milestones at fractions of the run so the schedule keeps its shape at any length."""
        milestones: List[int] = []
        for fraction in fractions:
            if not 0 < fraction < 1:
                raise InvalidSpec(f"Milestone fractions must lie in (0, 1), got {fraction}")
            milestone = int(round(fraction * total_iterations))
            # short runs: keep the milestones distinct
            if milestones and milestone <= milestones[-1]:
                milestone = milestones[-1] + 1
            milestones.append(milestone)
        return cls(initial_lr, tuple(milestones), decay_factor)


def lr_at(schedule: LrSchedule, iteration: int) -> float:
    """initial_lr * decay_factor ** (number of milestones <= iteration)."""
    passed = bisect.bisect_right(schedule.milestones, int(iteration))
    return schedule.initial_lr * schedule.decay_factor ** passed


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: SgdState,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
) -> Tuple[List[np.ndarray], SgdState]:
    """
    One momentum step; returns new parameter arrays and a new state.

        g   <- grad + weight_decay * param
        buf <- momentum * buf + g
        p   <- p - lr * buf
    """
    if not lr > 0:
        raise InvalidArgument(f"Learning rate must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise InvalidArgument(f"Momentum must lie in [0, 1), got {momentum}")
    if weight_decay < 0:
        raise InvalidArgument(f"Weight decay must be non-negative, got {weight_decay}")
    if not len(params) == len(grads) == len(state.momentum_buffers):
        raise ShapeMismatch(
            f"Got {len(params)} parameters, {len(grads)} gradients and {len(state.momentum_buffers)} buffers"
        )

    new_params, new_buffers = [], []
    for index, (param, grad, buf) in enumerate(zip(params, grads, state.momentum_buffers)):
        param = np.asarray(param, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if not param.shape == grad.shape == buf.shape:
            raise ShapeMismatch(
                f"Parameter {index}: shapes {param.shape}, {grad.shape}, {buf.shape} differ",
                {"index": index},
            )
        g = grad + weight_decay * param
        buf = momentum * buf + g
        new_buffers.append(buf)
        new_params.append(param - lr * buf)
    return new_params, SgdState(new_buffers, state.step_count + 1)
