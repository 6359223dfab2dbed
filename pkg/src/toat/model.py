"""The two-branch topic-attentive classifier wired end to end."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autograd as ag
from .attention import AttentionState, TopicAttention, uniform_mean
from .autograd import Tensor
from .config import TrainingConfig
from .data import InterviewSample, Vocabulary
from .encoders import (
    AudioEncoder,
    PrecomputedFeatures,
    TextEncoder,
    TopicFeatureMatrix,
    encode_audio,
    encode_text_all,
    passthrough_features,
)
from .fusion import FusionHead, probabilities
from .layers import Params


class TOATModel:
    """Text branch with topic attention, audio branch, late fusion.

    With ``features`` given the encoders are replaced by externally
    computed embeddings looked up by participant id; ``feature_dims``
    then fixes (D, D_a).
    """

    def __init__(
        self,
        config: TrainingConfig,
        n_topics: int,
        vocab: Vocabulary | None = None,
        features: Mapping[str, PrecomputedFeatures] | None = None,
        feature_dims: tuple[int, int] | None = None,
    ):
        self.config = config
        self.n_topics = n_topics
        self.vocab = vocab
        self.features = features
        dims = config.dims
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        self.text_encoder = self.audio_encoder = self.attention = None
        if features is not None:
            d_text, d_audio = feature_dims or (dims.d_model, dims.d_audio)
        else:
            d_text, d_audio = dims.d_model, dims.d_audio
        self.d_text, self.d_audio = d_text, d_audio
        fusion_dims = []
        if config.uses_text:
            if features is None:
                if vocab is None:
                    raise ValueError("a vocabulary is required for the learned text encoder")
                self.text_encoder = TextEncoder(
                    len(vocab), np.random.default_rng(seeds[0]), dims.d_model, dims.text_layers, dims.text_heads, dims.max_len
                )
            alpha = config.resolve_alpha(n_topics)
            if config.uses_attention:
                self.attention = TopicAttention(n_topics, d_text, np.random.default_rng(seeds[1]), alpha)
            fusion_dims.append(d_text)
        if config.uses_audio:
            if features is None:
                self.audio_encoder = AudioEncoder(
                    np.random.default_rng(seeds[2]),
                    dims.frame_dim,
                    dims.d_audio,
                    dims.audio_layers,
                    dims.audio_heads,
                    dims.conv_layers,
                    dims.pos_kernel,
                    dims.max_seconds,
                )
                if config.freeze_audio_frontend:
                    for name in self.audio_encoder.frontend_names():
                        self.audio_encoder.params[name].requires_grad = False
            fusion_dims.append(d_audio)
        self.fusion = FusionHead(tuple(fusion_dims), np.random.default_rng(seeds[3]), config.dropout)

    @property
    def alpha(self) -> float | None:
        return None if self.attention is None else self.attention.alpha

    def params(self) -> Params:
        out: Params = {}
        for part in (self.text_encoder, self.attention, self.audio_encoder, self.fusion):
            if part is not None:
                out.update(part.params)
        return out

    def trainable_params(self) -> Params:
        return {k: v for k, v in self.params().items() if v.requires_grad}

    def frozen_param_names(self) -> list[str]:
        return [k for k, v in self.params().items() if not v.requires_grad]

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, tensor in params.items():
            if tensor.shape != arrays[name].shape:
                raise ag.ShapeError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {tensor.shape}")
            tensor.data = np.array(arrays[name], dtype=np.float64, copy=True)
        if self.audio_encoder is not None:
            self.audio_encoder._frontend_cache.clear()

    # -- forward -----------------------------------------------------------

    def _precomputed(self, sample: InterviewSample) -> PrecomputedFeatures:
        try:
            feats = self.features[sample.participant_id]
        except KeyError:
            raise KeyError(f"no precomputed features for participant {sample.participant_id}") from None
        present = sample.present
        if present.any():
            # restrict to the topics the sample itself carries (topic-wise subsets)
            feats = PrecomputedFeatures(
                {i: v for i, v in feats.topic_features.items() if i <= present.size and present[i - 1]},
                feats.audio_feature,
            )
        return feats

    def branch_features(self, sample: InterviewSample) -> tuple[TopicFeatureMatrix | None, Tensor | None]:
        if len(sample.topics) != self.n_topics:
            raise ValueError(f"{sample.participant_id}: sample has {len(sample.topics)} topics, model expects {self.n_topics}")
        cfg = self.config
        if self.features is not None:
            H, h_a = passthrough_features(
                sample, self._precomputed(sample), self.d_text, self.d_audio if cfg.uses_audio else None
            )
            return (H if cfg.uses_text else None), h_a
        H = encode_text_all(sample, self.text_encoder, self.vocab) if cfg.uses_text else None
        h_a = encode_audio(sample, self.audio_encoder) if cfg.uses_audio else None
        return H, h_a

    def forward(
        self, sample: InterviewSample, train: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[Tensor, AttentionState | None]:
        """Two-class logits for one interview, plus the attention state when topic attention is on."""
        H, h_a = self.branch_features(sample)
        state = None
        parts = []
        if H is not None:
            if self.attention is not None:
                state = self.attention(H)
                parts.append(state.h_tilde_t)
            else:
                parts.append(uniform_mean(H))
        if h_a is not None:
            parts.append(h_a)
        return self.fusion(parts, train=train, rng=rng), state

    def predict(self, samples) -> tuple[np.ndarray, np.ndarray, list[AttentionState | None]]:
        """Eval-mode (labels, positive-class probabilities, attention states)."""
        labels, probs, states = [], [], []
        with ag.no_grad():
            for sample in samples:
                logits, state = self.forward(sample, train=False)
                p = probabilities(logits)
                labels.append(int(logits.data[1] >= logits.data[0]))
                probs.append(float(p[1]))
                states.append(state)
        return np.array(labels, dtype=np.int64), np.array(probs), states
