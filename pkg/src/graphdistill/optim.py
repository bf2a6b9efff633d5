"""Named trainable parameters and an AdamW optimizer with decoupled decay."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .autodiff import ContractError, Tensor


class Parameter:
    """A named tensor with first/second moment buffers for AdamW."""

    __slots__ = ("name", "tensor", "m", "v", "step_count")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def uniform_init(rng: np.random.Generator, shape: Sequence[int],
                 fan_in: int) -> np.ndarray:
    """Scaled uniform init with gain 1/sqrt(fan_in); used for all affine maps."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=tuple(shape))


class AdamW:
    """AdamW with decoupled weight decay applied before the moment update.

    Grads are zeroed after each step so a fresh backward always starts from
    a clean accumulator.
    """

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names in optimizer")
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def step(self) -> None:
        b1, b2 = self.betas
        for p in self.params:
            if p.tensor.grad is None:
                raise ContractError(f"parameter {p.name} has no grad buffer")
            g = p.tensor.grad
            if self.weight_decay != 0.0:
                p.tensor.data -= self.lr * self.weight_decay * p.tensor.data
            p.step_count += 1
            p.m *= b1
            p.m += (1.0 - b1) * g
            p.v *= b2
            p.v += (1.0 - b2) * (g * g)
            mhat = p.m / (1.0 - b1 ** p.step_count)
            vhat = p.v / (1.0 - b2 ** p.step_count)
            p.tensor.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.tensor.zero_grad()
