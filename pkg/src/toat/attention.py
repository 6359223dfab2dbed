"""Topic attention: score topics, normalise, threshold, aggregate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoders import TopicFeatureMatrix
from .layers import Params, uniform_fan_in


class MaskingError(RuntimeError):
    """A nonzero aggregation weight landed on an absent topic."""


@dataclass
class AttentionState:
    g: Tensor
    g_star: Tensor
    g_tilde: Tensor
    h_tilde_t: Tensor
    present: np.ndarray

    def to_record(self, participant_id: str) -> dict:
        def listed(t: Tensor):
            return [float(v) if p else None for v, p in zip(t.data, self.present)]

        return {
            "participant_id": participant_id,
            "present": self.present.tolist(),
            "g_star": listed(self.g_star),
            "g_tilde": listed(self.g_tilde),
        }


class TopicAttention:
    """Shared linear topic scorer reweighted by a learnable per-topic vector ``w``.

    ``alpha`` is the retention threshold on the normalised scores; ``None``
    keeps every normalised score (no threshold).
    """

    def __init__(self, n_topics: int, d_model: int, rng: np.random.Generator, alpha: float | None = None):
        self.n_topics = n_topics
        self.d_model = d_model
        self.alpha = alpha
        self.params: Params = {
            "ta.score.weight": uniform_fan_in(rng, d_model, (d_model,), "ta.score.weight"),
            "ta.score.bias": uniform_fan_in(rng, d_model, (1,), "ta.score.bias"),
            "ta.w": Tensor(np.ones(n_topics), requires_grad=True, name="ta.w"),
        }

    def score(self, H: TopicFeatureMatrix) -> Tensor:
        """g = w * Linear(H), one raw score per topic."""
        p = self.params
        linear = ag.add(ag.rowdot(H.H, p["ta.score.weight"]), p["ta.score.bias"])
        return ag.mul(p["ta.w"], linear)

    def __call__(self, H: TopicFeatureMatrix) -> AttentionState:
        if H.n_topics != self.n_topics:
            raise ag.ShapeError(f"expected {self.n_topics} topics, got {H.n_topics}")
        g = self.score(H)
        g_star = normalize(g, H.present)
        g_tilde = g_star if self.alpha is None else threshold(g_star, self.alpha)
        return AttentionState(g, g_star, g_tilde, aggregate(g_tilde, H), H.present)


def normalize(g: Tensor, present: np.ndarray) -> Tensor:
    return ag.masked_softmax(g, present)


def threshold(g_star: Tensor, alpha: float) -> Tensor:
    """Zero scores below ``alpha``; scores at or above it are kept as they are."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    return ag.straight_through_threshold(g_star, alpha)


def aggregate(g_tilde: Tensor, H: TopicFeatureMatrix) -> Tensor:
    """Weighted sum of topic rows; absent rows must carry weight exactly zero."""
    if np.any(g_tilde.data[~H.present] != 0.0):
        raise MaskingError("nonzero topic weight on an absent topic")
    return ag.fsum_rows(g_tilde, H.H)


def uniform_mean(H: TopicFeatureMatrix) -> Tensor:
    """Topic-attention-free aggregation: plain mean over present rows."""
    weights = H.present / H.present.sum()
    return ag.fsum_rows(Tensor(weights), H.H)
