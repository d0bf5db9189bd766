"""Adam and a reduce-on-plateau learning-rate scheduler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..exceptions import NonFiniteGradientError
from .tensor import Tensor


@dataclass
class OptimizerState:
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step: int = 0


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(
            learning_rate=lr,
            beta1=betas[0],
            beta2=betas[1],
            epsilon=eps,
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
        )

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """One bias-corrected Adam update of every parameter, in place."""
        for i, p in enumerate(self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(p.name or f"param[{i}]")
        s = self.state
        s.step += 1
        c1 = 1.0 - s.beta1**s.step
        c2 = 1.0 - s.beta2**s.step
        for p, m, v in zip(self.params, s.first_moment, s.second_moment):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p.data -= s.learning_rate * (m / c1) / (np.sqrt(v / c2) + s.epsilon)


@dataclass
class SchedulerState:
    factor: float = 0.2
    patience: int = 3
    best_loss: float = math.inf
    epochs_since_improvement: int = 0
    minimum_lr: float = 1e-7
    reductions: int = 0


class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` after a plateau.

    An epoch improves when its mean loss is strictly below the best seen so
    far. Otherwise the counter grows, and once it exceeds ``patience`` (the
    fourth flat epoch for patience 3) the rate is cut and the counter resets.
    The rate never drops below ``minimum_lr``.
    """

    def __init__(self, optimizer: Adam, factor: float = 0.2, patience: int = 3, minimum_lr: float = 1e-7):
        self.optimizer = optimizer
        self.state = SchedulerState(factor=factor, patience=patience, minimum_lr=minimum_lr)

    def step(self, epoch_loss: float) -> float:
        s = self.state
        if epoch_loss < s.best_loss:
            s.best_loss = float(epoch_loss)
            s.epochs_since_improvement = 0
        else:
            s.epochs_since_improvement += 1
        if s.epochs_since_improvement > s.patience:
            new_lr = max(self.optimizer.lr * s.factor, s.minimum_lr)
            if new_lr < self.optimizer.lr:
                self.optimizer.lr = new_lr
                s.reductions += 1
            s.epochs_since_improvement = 0
        return self.optimizer.lr

    @property
    def at_floor(self) -> bool:
        return self.optimizer.lr <= self.state.minimum_lr
