"""Adaptive-moment optimizer with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


def adamw_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One in-place update of ``param``, ``m`` and ``v``; ``step`` counts from 1.

    Decay shrinks the parameter directly rather than entering the gradient.
    """
    beta1, beta2 = betas
    param *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_update(
                p.data, grad, self.m[name], self.v[name], self.step_count,
                self.lr, self.betas, self.eps, self.weight_decay,
            )

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, step: int, m: dict[str, np.ndarray], v: dict[str, np.ndarray]) -> None:
        if set(m) != set(self.params) or set(v) != set(self.params):
            raise KeyError("optimizer state does not match the parameter set")
        self.step_count = int(step)
        self.m = {k: np.array(a, dtype=np.float64, copy=True) for k, a in m.items()}
        self.v = {k: np.array(a, dtype=np.float64, copy=True) for k, a in v.items()}
