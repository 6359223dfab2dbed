"""Training loop, checkpoints and best-epoch model selection."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import TrainingConfig
from .data import InterviewSample, Vocabulary, class_counts, oversample
from .encoders import PrecomputedFeatures
from .fusion import batch_loss
from .metrics import ConfusionMatrix, compute_metrics
from .model import TOATModel
from .optim import AdamW

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_FIELDS = ("epoch", "train_loss", "val_accuracy", "val_recall", "val_precision", "val_f1")


class TrainingError(RuntimeError):
    """Training aborted, e.g. on a non-finite loss."""


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or from an incompatible version."""


@dataclass
class Checkpoint:
    config: TrainingConfig
    n_topics: int
    params: dict[str, np.ndarray]
    frozen: list[str]
    optimizer_step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    epoch: int
    rng_state: dict
    vocab: list[str] | None = None
    feature_dims: tuple[int, int] | None = None
    metrics: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def save(self, path: str | Path) -> None:
        meta = {
            "version": self.version,
            "config": self.config.to_dict(),
            "n_topics": self.n_topics,
            "frozen": self.frozen,
            "optimizer_step": self.optimizer_step,
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "vocab": self.vocab,
            "feature_dims": None if self.feature_dims is None else list(self.feature_dims),
            "metrics": self.metrics,
        }
        arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
        for prefix, group in (("param", self.params), ("m", self.m), ("v", self.v)):
            for name, value in group.items():
                arrays[f"{prefix}:{name}"] = value
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            with np.load(path, allow_pickle=False) as npz:
                meta = json.loads(str(npz["meta"]))
                groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "m": {}, "v": {}}
                for key in npz.files:
                    if key == "meta":
                        continue
                    prefix, name = key.split(":", 1)
                    groups[prefix][name] = npz[key]
        except (OSError, ValueError, KeyError) as exc:
            raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} != supported {CHECKPOINT_VERSION}")
        dims = meta["feature_dims"]
        return cls(
            config=TrainingConfig.from_dict(meta["config"]),
            n_topics=meta["n_topics"],
            params=groups["param"],
            frozen=meta["frozen"],
            optimizer_step=meta["optimizer_step"],
            m=groups["m"],
            v=groups["v"],
            epoch=meta["epoch"],
            rng_state=meta["rng_state"],
            vocab=meta["vocab"],
            feature_dims=None if dims is None else tuple(dims),
            metrics=meta.get("metrics", {}),
        )

    def build_model(self, features: Mapping[str, PrecomputedFeatures] | None = None) -> TOATModel:
        vocab = None if self.vocab is None else Vocabulary(self.vocab[4:])
        if (features is None) != (self.feature_dims is None):
            raise CheckpointError("checkpoint and feature source disagree on precomputed features")
        model = TOATModel(self.config, self.n_topics, vocab, features, self.feature_dims)
        model.load_arrays(self.params)
        return model


def _batches(n: int, size: int, order: np.ndarray) -> list[np.ndarray]:
    return [order[i : i + size] for i in range(0, n, size)]


class Trainer:
    """Owns one training run: model, optimizer, shuffling rng and epoch counter."""

    def __init__(
        self,
        config: TrainingConfig,
        train_set: Sequence[InterviewSample],
        vocab: Vocabulary | None = None,
        features: Mapping[str, PrecomputedFeatures] | None = None,
        feature_dims: tuple[int, int] | None = None,
    ):
        if not train_set:
            raise ValueError("empty training set")
        self.config = config
        n_topics = len(train_set[0].topics)
        if config.oversample:
            train_set = oversample(train_set, config.seed)
        self.train_set = list(train_set)
        if vocab is None and config.uses_text and features is None:
            vocab = Vocabulary.build(self.train_set)
        self.model = TOATModel(config, n_topics, vocab, features, feature_dims)
        self.optimizer = AdamW(
            self.model.trainable_params(), config.learning_rate, config.betas, config.eps, config.weight_decay
        )
        self.rng = np.random.default_rng([config.seed, 1])
        self.epoch = 0

    def step(self, batch: Sequence[InterviewSample]) -> float:
        """Forward, backward and one optimizer update on ``batch``."""
        logits = [self.model.forward(s, train=True, rng=self.rng)[0] for s in batch]
        loss = batch_loss(logits, [s.label for s in batch])
        value = float(loss.data)
        if not math.isfinite(value):
            norms = {k: float(np.linalg.norm(p.data)) for k, p in self.model.params().items()}
            raise TrainingError(
                f"non-finite loss {value} at epoch {self.epoch + 1}, samples "
                f"{[s.participant_id for s in batch]}; parameter norms {norms}"
            )
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return value

    def run_epoch(self) -> float:
        order = self.rng.permutation(len(self.train_set))
        losses = []
        for idx in _batches(len(order), self.config.batch_size, order):
            losses.append(self.step([self.train_set[i] for i in idx]))
        self.epoch += 1
        return float(np.mean(losses))

    def checkpoint(self, metrics: dict | None = None) -> Checkpoint:
        model = self.model
        vocab = None if model.vocab is None else list(model.vocab.itos)
        return Checkpoint(
            config=self.config,
            n_topics=model.n_topics,
            params={k: p.data.copy() for k, p in model.params().items()},
            frozen=model.frozen_param_names(),
            optimizer_step=self.optimizer.step_count,
            m={k: a.copy() for k, a in self.optimizer.m.items()},
            v={k: a.copy() for k, a in self.optimizer.v.items()},
            epoch=self.epoch,
            rng_state=self.rng.bit_generator.state,
            vocab=vocab,
            feature_dims=(model.d_text, model.d_audio) if model.features is not None else None,
            metrics=metrics or {},
        )

    @classmethod
    def resume(
        cls,
        checkpoint: Checkpoint,
        train_set: Sequence[InterviewSample],
        features: Mapping[str, PrecomputedFeatures] | None = None,
    ) -> "Trainer":
        vocab = None if checkpoint.vocab is None else Vocabulary(checkpoint.vocab[4:])
        trainer = cls(checkpoint.config, train_set, vocab, features, checkpoint.feature_dims)
        trainer.model.load_arrays(checkpoint.params)
        trainer.optimizer.load_state(checkpoint.optimizer_step, checkpoint.m, checkpoint.v)
        trainer.rng.bit_generator.state = checkpoint.rng_state
        trainer.epoch = checkpoint.epoch
        return trainer


def evaluate_model(model: TOATModel, samples: Sequence[InterviewSample]) -> tuple[ConfusionMatrix, dict]:
    predictions, _, _ = model.predict(samples)
    matrix = ConfusionMatrix.from_predictions(predictions, [s.label for s in samples])
    return matrix, compute_metrics(matrix).to_dict()


def train(
    config: TrainingConfig,
    train_set: Sequence[InterviewSample],
    validation_set: Sequence[InterviewSample],
    features: Mapping[str, PrecomputedFeatures] | None = None,
    feature_dims: tuple[int, int] | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train for ``config.epochs`` and keep the epoch with the best validation F1.

    Ties go to the earlier epoch. With ``config.patience`` set, training
    stops once that many epochs pass without a validation F1 improvement.
    """
    if not validation_set:
        raise ValueError("empty validation set")
    counts = class_counts(train_set)
    if config.oversample and min(counts.values()) == 0:
        raise ValueError(f"training set is single-class: {counts}")
    trainer = Trainer(config, train_set, features=features, feature_dims=feature_dims)
    history: list[dict] = []
    best: Checkpoint | None = None
    best_f1, since_best = -1.0, 0
    for _ in range(config.epochs):
        loss = trainer.run_epoch()
        matrix, metrics = evaluate_model(trainer.model, validation_set)
        row = {
            "epoch": trainer.epoch,
            "train_loss": loss,
            "val_accuracy": metrics["accuracy"],
            "val_recall": metrics["recall"],
            "val_precision": metrics["precision"],
            "val_f1": metrics["f1"],
        }
        history.append(row)
        logger.info("epoch %d loss %.5f val F1 %.3f", trainer.epoch, loss, metrics["f1"])
        if on_epoch is not None:
            on_epoch(row)
        if metrics["f1"] > best_f1:
            best_f1, since_best = metrics["f1"], 0
            best = trainer.checkpoint({"validation": metrics, "validation_confusion": matrix.to_dict()})
        else:
            since_best += 1
            if config.patience is not None and since_best >= config.patience:
                break
    return best, history


def write_history(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})
