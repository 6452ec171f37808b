"""SGD with momentum, a piecewise-constant LR schedule and gradient scaling."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TrainHyper:
    # (iterations, lr) segments; defaults follow the reference training recipe
    lr_schedule: tuple[tuple[int, float], ...] = ((46000, 0.004), (14000, 0.0004))
    momentum: float = 0.9
    itersize: int = 2
    init_std: float = 0.01

    def __post_init__(self):
        if not self.lr_schedule:
            raise ValueError("lr_schedule must not be empty")
        if any(lr <= 0 for _, lr in self.lr_schedule):
            raise ValueError(f"learning rates must be positive, got {self.lr_schedule}")
        if self.itersize < 1:
            raise ValueError(f"itersize must be >= 1, got {self.itersize}")
        object.__setattr__(
            self, "lr_schedule", tuple((int(n), float(lr)) for n, lr in self.lr_schedule)
        )

    @property
    def total_iterations(self) -> int:
        return sum(n for n, _ in self.lr_schedule)


def lr_at(iteration: int, hyper: TrainHyper) -> float:
    """LR for a given optimizer step; past the schedule, the last LR holds."""
    edge = 0
    for steps, lr in hyper.lr_schedule:
        edge += steps
        if iteration < edge:
            return lr
    return hyper.lr_schedule[-1][1]


def sgd_momentum_step(params, velocity, hyper: TrainHyper, iteration: int) -> None:
    """v <- mu*v + lr*mult*grad; w <- w - v. A zero lr multiplier freezes the weight.

    Gradients are expected to be pre-averaged over the accumulation window.
    """
    lr = lr_at(iteration, hyper)
    for name, p in params.items():
        v = velocity[name]
        v *= hyper.momentum
        if p.lr_mult != 0.0:
            v += (lr * p.lr_mult) * p.grad
        p.value -= v
