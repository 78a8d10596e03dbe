"""SGD with momentum, coupled weight decay and a step-decay schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.005
    # divide the rate by 10 every this many epochs; 0 disables decay
    lr_decay_every: int = 6

    def __post_init__(self):
        for name in ("learning_rate", "momentum", "weight_decay", "lr_decay_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_every <= 0:
            return self.learning_rate
        return self.learning_rate / 10 ** (epoch // self.lr_decay_every)


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict[str, np.ndarray],
    cfg: SgdConfig,
    lr: float | None = None,
) -> None:
    """In-place update of ``params`` and velocity ``state``.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v
    """
    lr = cfg.learning_rate if lr is None else lr
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, param {p.shape}")
        v = state.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = cfg.momentum * v + g + cfg.weight_decay * p
        state[name] = v
        p -= lr * v


class SGD:
    """Optimizer bound to a named parameter table of :class:`Tensor` objects."""

    def __init__(self, params, cfg: SgdConfig):
        self.params = dict(params)
        self.cfg = cfg
        self.state: dict[str, np.ndarray] = {}
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        sgd_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items() if p.grad is not None},
            self.state,
            self.cfg,
            lr,
        )
        self.steps += 1
