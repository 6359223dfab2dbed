"""Late fusion head and the two-class cross-entropy objective."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import Params, apply_layer_norm, apply_linear, init_layer_norm, init_linear


class FusionHead:
    """concat -> layer norm -> dropout -> linear(2)."""

    def __init__(self, dims: tuple[int, ...], rng: np.random.Generator, dropout: float = 0.1, eps: float = 1e-5):
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {dropout}")
        self.dims = tuple(dims)
        self.dropout = dropout
        self.eps = eps
        width = sum(self.dims)
        self.params: Params = {}
        init_layer_norm(self.params, "fusion.ln", width)
        init_linear(self.params, "fusion.classifier", rng, width, 2)

    def __call__(self, features: list[Tensor], train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        widths = tuple(f.shape[-1] for f in features)
        if widths != self.dims:
            raise ag.ShapeError(f"fusion expects feature widths {self.dims}, got {widths}")
        x = features[0] if len(features) == 1 else ag.concat(features)
        x = apply_layer_norm(self.params, "fusion.ln", x, self.eps)
        x = ag.dropout(x, self.dropout, rng, train)
        return apply_linear(self.params, "fusion.classifier", x)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    return ag.cross_entropy(logits, label)


def batch_loss(logits: list[Tensor], labels: list[int]) -> Tensor:
    """Mean cross-entropy over a batch."""
    total = cross_entropy(logits[0], labels[0])
    for z, y in zip(logits[1:], labels[1:]):
        total = ag.add(total, cross_entropy(z, y))
    return ag.mul(total, 1.0 / len(logits))


def probabilities(logits: Tensor) -> np.ndarray:
    z = logits.data - logits.data.max()
    e = np.exp(z)
    return e / e.sum()
