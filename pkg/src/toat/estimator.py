"""scikit-learn compatible estimator around the trainer."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from .config import Dims, TrainingConfig
from .data import InterviewSample
from .evaluation import usage_rates
from .fusion import probabilities
from . import autograd as ag
from .trainer import train


def check_samples(X, y=None) -> tuple[list[InterviewSample], np.ndarray]:
    """Validate a sequence of interviews and optional labels; labels default to the samples' own."""
    if isinstance(X, InterviewSample) or not isinstance(X, Sequence):
        raise TypeError("X must be a sequence of InterviewSample")
    samples = list(X)
    if not samples:
        raise ValueError("X is empty")
    for s in samples:
        if not isinstance(s, InterviewSample):
            raise TypeError(f"expected InterviewSample, got {type(s).__name__}")
    n_topics = {len(s.topics) for s in samples}
    if len(n_topics) != 1:
        raise ValueError(f"samples disagree on the number of topics: {sorted(n_topics)}")
    if y is None:
        labels = np.array([s.label for s in samples], dtype=np.int64)
    else:
        labels = np.asarray(y)
        if labels.shape != (len(samples),):
            raise ValueError(f"y has shape {labels.shape}, expected ({len(samples)},)")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("y must be binary with values in {0, 1}")
        labels = labels.astype(np.int64)
        samples = [
            s if s.label == lab else InterviewSample(s.participant_id, int(lab), s.topics)
            for s, lab in zip(samples, labels)
        ]
    return samples, labels


class TOATClassifier(ClassifierMixin, BaseEstimator):
    """Topic-attentive two-branch interview classifier.

    ``fit`` takes a list of :class:`~toat.data.InterviewSample`. Without an
    explicit validation set, a stratified ``validation_fraction`` of the
    training data is held out for best-epoch selection.
    """

    def __init__(
        self,
        modality: str = "both",
        alpha: float | str = "auto",
        learning_rate: float = 1e-3,
        epochs: int = 50,
        batch_size: int = 1,
        oversample: bool = True,
        freeze_audio_frontend: bool = True,
        dropout: float = 0.1,
        weight_decay: float = 0.01,
        patience: int | None = None,
        dims: dict | None = None,
        validation_fraction: float = 0.2,
        seed: int = 0,
    ):
        self.modality = modality
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.oversample = oversample
        self.freeze_audio_frontend = freeze_audio_frontend
        self.dropout = dropout
        self.weight_decay = weight_decay
        self.patience = patience
        self.dims = dims
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _config(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            alpha=self.alpha,
            seed=self.seed,
            oversample=self.oversample,
            freeze_audio_frontend=self.freeze_audio_frontend,
            modality=self.modality,
            dropout=self.dropout,
            weight_decay=self.weight_decay,
            patience=self.patience,
            dims=Dims(**(self.dims or {})),
        )

    def fit(self, X, y=None, X_val=None, y_val=None):
        samples, labels = check_samples(X, y)
        if X_val is None:
            samples, val, _, _ = train_test_split(
                samples, labels, test_size=self.validation_fraction, stratify=labels, random_state=self.seed
            )
        else:
            val, _ = check_samples(X_val, y_val)
        self.checkpoint_, self.history_ = train(self._config(), samples, val)
        self.model_ = self.checkpoint_.build_model()
        self.classes_ = np.array([0, 1])
        self.n_topics_ = self.model_.n_topics
        return self

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        samples, _ = check_samples(X)
        with ag.no_grad():
            return np.array([self.model_.forward(s)[0].data for s in samples])

    def decision_function(self, X) -> np.ndarray:
        z = self._logits(X)
        return z[:, 1] - z[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        return np.array([probabilities(ag.Tensor(z)) for z in self._logits(X)])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(np.int64)

    def transform(self, X) -> np.ndarray:
        """Normalised topic scores (n_samples, N); absent topics are NaN."""
        check_is_fitted(self, "model_")
        if self.model_.attention is None:
            raise AttributeError("transform needs topic attention (alpha != 'off' and a text branch)")
        samples, _ = check_samples(X)
        _, _, states = self.model_.predict(samples)
        return np.array([np.where(st.present, st.g_star.data, np.nan) for st in states])

    def usage_rates(self, X) -> list[float | None]:
        check_is_fitted(self, "model_")
        samples, _ = check_samples(X)
        _, _, states = self.model_.predict(samples)
        dumps = [st.to_record(s.participant_id) for st, s in zip(states, samples)]
        return usage_rates(dumps, self.model_.alpha, self.n_topics_)
