"""Training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

MODALITIES = ("both", "text", "audio")
PAPER_LEARNING_RATE = 4e-6


class ConfigError(ValueError):
    pass


@dataclass
class Dims:
    d_model: int = 64
    text_layers: int = 2
    text_heads: int = 4
    max_len: int = 128
    frame_dim: int = 32
    d_audio: int = 32
    audio_layers: int = 2
    audio_heads: int = 4
    conv_layers: tuple = ((10, 5), (8, 4))
    pos_kernel: int = 9
    max_seconds: float = 4.0

    def __post_init__(self):
        self.conv_layers = tuple(tuple(int(v) for v in c) for c in self.conv_layers)


@dataclass
class TrainingConfig:
    """Hyperparameters for one training run.

    ``alpha`` is a float threshold, ``"auto"`` for 1/N, or ``"off"`` to
    replace topic attention by a uniform mean over present topics.
    """

    learning_rate: float = 1e-3
    batch_size: int = 1
    epochs: int = 50
    alpha: float | str = "auto"
    seed: int = 0
    oversample: bool = True
    freeze_audio_frontend: bool = True
    modality: str = "both"
    dropout: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    patience: int | None = None
    dims: Dims = field(default_factory=Dims)

    def __post_init__(self):
        if isinstance(self.dims, dict):
            self.dims = Dims(**self.dims)
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if isinstance(self.alpha, str):
            if self.alpha not in ("auto", "off"):
                raise ConfigError(f"alpha must be a number, 'auto' or 'off', got {self.alpha!r}")
        elif self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be positive, got {self.patience}")

    @property
    def uses_text(self) -> bool:
        return self.modality in ("both", "text")

    @property
    def uses_audio(self) -> bool:
        return self.modality in ("both", "audio")

    @property
    def uses_attention(self) -> bool:
        return self.uses_text and self.alpha != "off"

    def resolve_alpha(self, n_topics: int) -> float | None:
        if not self.uses_attention:
            return None
        return 1.0 / n_topics if self.alpha == "auto" else float(self.alpha)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        d["dims"]["conv_layers"] = [list(c) for c in self.dims.conv_layers]
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainingConfig":
        unknown = set(obj) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config field(s): {', '.join(sorted(unknown))}")
        obj = dict(obj)
        if "dims" in obj:
            dims = obj["dims"]
            unknown = set(dims) - {f.name for f in dataclasses.fields(Dims)}
            if unknown:
                raise ConfigError(f"unknown dims field(s): {', '.join(sorted(unknown))}")
            obj["dims"] = Dims(**dims)
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)
