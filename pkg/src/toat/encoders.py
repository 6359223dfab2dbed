"""Text and audio branch encoders, plus ingestion of precomputed features.

Both encoders are small trainable stand-ins for large pretrained
backbones. The text encoder reads out the CLS position of a post-norm
transformer; the audio encoder runs a strided convolutional frontend, a
convolutional relative-position embedding and a transformer, then
projects every frame and averages over time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import MASK_FILL, Tensor
from .data import PAD_ID, SAMPLE_RATE, DataError, InterviewSample, Vocabulary
from .layers import (
    Params,
    apply_layer_norm,
    apply_linear,
    init_layer_norm,
    init_linear,
    init_transformer_layer,
    normal,
    transformer_layer,
    uniform_fan_in,
)


class AudioTooShortError(ValueError):
    pass


@dataclass
class TopicFeatureMatrix:
    """Per-topic text features (N, D); absent rows hold ``MASK_FILL`` everywhere."""

    H: Tensor
    present: np.ndarray

    def __post_init__(self):
        self.present = np.asarray(self.present, dtype=bool)
        if self.H.ndim != 2 or self.H.shape[0] != self.present.size:
            raise ag.ShapeError(f"feature matrix {self.H.shape} does not match mask of length {self.present.size}")
        if not np.all(self.H.data[~self.present] == MASK_FILL):
            raise ValueError("absent topic rows must be filled with the mask value")
        if not np.all(np.isfinite(self.H.data[self.present])):
            raise ValueError("present topic rows must be finite")

    @property
    def n_topics(self) -> int:
        return self.present.size

    @classmethod
    def from_rows(cls, rows: Tensor, present: np.ndarray) -> "TopicFeatureMatrix":
        """Scatter the (P, D) present rows into an (N, D) matrix."""
        present = np.asarray(present, dtype=bool)
        H = ag.scatter_rows(rows, np.flatnonzero(present), present.size, MASK_FILL)
        return cls(H, present)


class TextEncoder:
    """Token + position embeddings, post-norm transformer layers, CLS readout."""

    def __init__(
        self,
        vocab_size: int,
        rng: np.random.Generator,
        d_model: int = 64,
        n_layers: int = 2,
        n_heads: int = 4,
        max_len: int = 128,
        d_ff: int | None = None,
    ):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} is not divisible by n_heads {n_heads}")
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_len = max_len
        d_ff = d_ff or 2 * d_model
        p: Params = {}
        p["text.tok_embed"] = normal(rng, 0.02, (vocab_size, d_model), "text.tok_embed")
        p["text.pos_embed"] = normal(rng, 0.02, (max_len, d_model), "text.pos_embed")
        init_layer_norm(p, "text.embed_ln", d_model)
        for layer in range(n_layers):
            init_transformer_layer(p, f"text.layer{layer}", rng, d_model, d_ff)
        self.params = p

    def encode_batch(self, sequences: Sequence[Sequence[int]]) -> Tensor:
        """CLS outputs (P, D) for P token sequences, padded to a common length."""
        if not sequences:
            raise ValueError("no sequences to encode")
        length = max(len(s) for s in sequences)
        if length > self.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.max_len}")
        ids = np.full((len(sequences), length), PAD_ID, dtype=np.int64)
        key_mask = np.zeros((len(sequences), length), dtype=bool)
        for row, seq in enumerate(sequences):
            if len(seq) == 0:
                raise ValueError("empty token sequence")
            ids[row, : len(seq)] = seq
            key_mask[row, : len(seq)] = True
        p = self.params
        x = ag.embedding(p["text.tok_embed"], ids)
        x = ag.add(x, ag.take(p["text.pos_embed"], slice(0, length)))
        x = apply_layer_norm(p, "text.embed_ln", x)
        for layer in range(self.n_layers):
            x = transformer_layer(p, f"text.layer{layer}", x, self.n_heads, key_mask)
        return ag.take(x, (slice(None), 0))

    def encode_topic(self, tokens: Sequence[int]) -> Tensor:
        return ag.take(self.encode_batch([tokens]), 0)


def encode_text_all(sample: InterviewSample, encoder: TextEncoder, vocab: Vocabulary) -> TopicFeatureMatrix:
    """Encode every present topic ``[CLS] q [SEP] r [SEP]``; absent rows get the mask fill."""
    present = sample.present
    if not present.any():
        raise ag.EmptyTopicSetError(f"{sample.participant_id}: empty topic set")
    sequences = [vocab.encode_pair(t.question, t.reply_text) for t in sample.topics if t is not None]
    return TopicFeatureMatrix.from_rows(encoder.encode_batch(sequences), present)


class AudioEncoder:
    """Strided conv frontend, conv relative-position embedding, transformer, projector + time mean."""

    def __init__(
        self,
        rng: np.random.Generator,
        frame_dim: int = 32,
        d_audio: int = 32,
        n_layers: int = 2,
        n_heads: int = 4,
        conv_layers: Sequence[tuple[int, int]] = ((10, 5), (8, 4)),
        pos_kernel: int = 9,
        max_seconds: float = 4.0,
        sample_rate: int = SAMPLE_RATE,
        d_ff: int | None = None,
    ):
        if frame_dim % n_heads:
            raise ValueError(f"frame_dim {frame_dim} is not divisible by n_heads {n_heads}")
        if pos_kernel % 2 == 0:
            raise ValueError("pos_kernel must be odd")
        self.frame_dim = frame_dim
        self.d_audio = d_audio
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.conv_layers = tuple(tuple(c) for c in conv_layers)
        self.pos_kernel = pos_kernel
        self.max_seconds = max_seconds
        self.sample_rate = sample_rate
        self._frontend_cache: dict[bytes, np.ndarray] = {}
        d_ff = d_ff or 2 * frame_dim
        p: Params = {}
        c_in = 1
        for i, (kernel, _) in enumerate(self.conv_layers):
            fan_in = c_in * kernel
            p[f"audio.frontend.conv{i}.weight"] = uniform_fan_in(rng, fan_in, (frame_dim, c_in, kernel), f"audio.frontend.conv{i}.weight")
            p[f"audio.frontend.conv{i}.bias"] = uniform_fan_in(rng, fan_in, (frame_dim,), f"audio.frontend.conv{i}.bias")
            c_in = frame_dim
        init_layer_norm(p, "audio.frame_ln", frame_dim)
        fan_in = frame_dim * pos_kernel
        p["audio.pos_conv.weight"] = uniform_fan_in(rng, fan_in, (frame_dim, frame_dim, pos_kernel), "audio.pos_conv.weight")
        p["audio.pos_conv.bias"] = uniform_fan_in(rng, fan_in, (frame_dim,), "audio.pos_conv.bias")
        init_layer_norm(p, "audio.pos_ln", frame_dim)
        for layer in range(n_layers):
            init_transformer_layer(p, f"audio.layer{layer}", rng, frame_dim, d_ff)
        init_linear(p, "audio.projector", rng, frame_dim, d_audio)
        self.params = p

    @property
    def receptive_field(self) -> int:
        field, jump = 1, 1
        for kernel, stride in self.conv_layers:
            field += (kernel - 1) * jump
            jump *= stride
        return field

    def frontend_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("audio.frontend.")]

    def frontend_frozen(self) -> bool:
        return not any(self.params[k].requires_grad for k in self.frontend_names())

    def truncate(self, samples: np.ndarray) -> np.ndarray:
        return samples[: int(self.max_seconds * self.sample_rate)]

    def frontend(self, samples: np.ndarray) -> Tensor:
        """Convolutional feature frames (L, frame_dim); cached when the frontend is frozen."""
        frozen = self.frontend_frozen()
        key = None
        if frozen:
            key = hashlib.sha1(np.ascontiguousarray(samples).tobytes()).digest()
            hit = self._frontend_cache.get(key)
            if hit is not None:
                return Tensor(hit)
        x = Tensor(samples[None, :])
        for i, (_, stride) in enumerate(self.conv_layers):
            x = ag.gelu(ag.conv1d(x, self.params[f"audio.frontend.conv{i}.weight"], self.params[f"audio.frontend.conv{i}.bias"], stride))
        frames = ag.swapaxes(x, 0, 1)
        if frozen:
            self._frontend_cache[key] = frames.data
        return frames

    def frames(self, samples: np.ndarray) -> Tensor:
        """Output of the last transformer layer, shape (L, frame_dim)."""
        p = self.params
        x = apply_layer_norm(p, "audio.frame_ln", self.frontend(samples))
        half = self.pos_kernel // 2
        pos = ag.conv1d(ag.pad_time(ag.swapaxes(x, 0, 1), half, half), p["audio.pos_conv.weight"], p["audio.pos_conv.bias"])
        x = ag.add(x, ag.gelu(ag.swapaxes(pos, 0, 1)))
        x = apply_layer_norm(p, "audio.pos_ln", x)
        x = ag.reshape(x, (1, *x.shape))
        for layer in range(self.n_layers):
            x = transformer_layer(p, f"audio.layer{layer}", x, self.n_heads)
        return ag.take(x, 0)

    def encode(self, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> Tensor:
        """Truncate, encode and pool a waveform into a (D_a,) vector."""
        if sample_rate != self.sample_rate:
            raise DataError(f"expected {self.sample_rate} Hz audio, got {sample_rate} Hz")
        samples = self.truncate(np.asarray(samples, dtype=np.float64))
        if samples.size < self.receptive_field:
            raise AudioTooShortError(f"audio too short: {samples.size} samples < receptive field {self.receptive_field}")
        return project_and_pool(self.params, self.frames(samples))


def project_and_pool(params: Params, frames: Tensor) -> Tensor:
    """Linear projection of every frame followed by the mean over time."""
    return ag.mean(apply_linear(params, "audio.projector", frames), axis=0)


def interview_waveform(sample: InterviewSample, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Concatenate the present replies' audio in topic order."""
    parts = []
    for entry in sample.topics:
        if entry is None or not entry.has_audio:
            continue
        audio = entry.reply_audio
        if audio.sample_rate != sample_rate:
            raise DataError(f"{sample.participant_id}: expected {sample_rate} Hz audio, got {audio.sample_rate} Hz")
        parts.append(audio.samples)
    if not parts:
        raise DataError(f"{sample.participant_id}: no reply audio")
    return np.concatenate(parts)


def encode_audio(sample: InterviewSample, encoder: AudioEncoder) -> Tensor:
    return encoder.encode(interview_waveform(sample, encoder.sample_rate), encoder.sample_rate)


# ---------------------------------------------------------------------------
# precomputed features


@dataclass
class PrecomputedFeatures:
    topic_features: dict[int, np.ndarray]
    audio_feature: np.ndarray | None


def load_feature_file(path: str | Path) -> dict[str, PrecomputedFeatures]:
    """Read ``{participant_id, topic_features: {index: [...]}, audio_feature: [...]}`` JSONL."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pid = str(rec["participant_id"])
                topics = {int(k): np.asarray(v, dtype=np.float64) for k, v in rec.get("topic_features", {}).items()}
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed feature record: {exc}") from exc
            audio = rec.get("audio_feature")
            out[pid] = PrecomputedFeatures(topics, None if audio is None else np.asarray(audio, dtype=np.float64))
    return out


def passthrough_features(
    sample: InterviewSample,
    features: PrecomputedFeatures,
    d_text: int,
    d_audio: int | None,
) -> tuple[TopicFeatureMatrix, Tensor | None]:
    """Assemble externally computed embeddings with the same masking as ``encode_text_all``."""
    n = len(sample.topics)
    present = np.zeros(n, dtype=bool)
    rows = []
    for index in sorted(features.topic_features):
        if not 1 <= index <= n:
            raise DataError(f"{sample.participant_id}: feature for unknown topic {index}")
        vec = features.topic_features[index]
        if vec.shape != (d_text,):
            raise DataError(f"{sample.participant_id}: topic {index} feature has width {vec.size}, expected D={d_text}")
        present[index - 1] = True
        rows.append(vec)
    if not rows:
        raise ag.EmptyTopicSetError(f"{sample.participant_id}: empty topic set")
    matrix = TopicFeatureMatrix.from_rows(Tensor(np.stack(rows)), present)
    audio = None
    if d_audio is not None:
        if features.audio_feature is None or features.audio_feature.shape != (d_audio,):
            width = None if features.audio_feature is None else features.audio_feature.size
            raise DataError(f"{sample.participant_id}: audio feature has width {width}, expected D_a={d_audio}")
        audio = Tensor(features.audio_feature)
    return matrix, audio
