"""Evaluation reports, topic usage rates, the ablation grid and topic-wise subsets."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import TrainingConfig
from .data import InterviewSample
from .encoders import PrecomputedFeatures
from .metrics import ConfusionMatrix, compute_metrics
from .model import TOATModel
from .trainer import train

logger = logging.getLogger(__name__)

# (modality, alpha) rows of the ablation table: full model, threshold sweep,
# topic attention removed, and the two single-branch variants.
PAPER_ABLATION_GRID = (
    ("both", "auto"),
    ("both", 0.0),
    ("both", 0.2),
    ("both", "off"),
    ("text", "auto"),
    ("text", 0.0),
    ("text", "off"),
    ("audio", "off"),
)


def config_fingerprint(config: TrainingConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvalReport:
    name: str
    confusion: ConfusionMatrix
    metrics: dict
    usage_rates: list[float | None] | None = None
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def f1(self) -> float:
        return self.metrics["f1"]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "confusion": self.confusion.to_dict(),
            "metrics": self.metrics,
            "usage_rates": self.usage_rates,
            "config_fingerprint": self.fingerprint,
            **self.extra,
        }


def usage_rates(
    dumps: Sequence[Mapping],
    alpha: float,
    n_topics: int | None = None,
    sample_counts: Sequence[int] | None = None,
) -> list[float | None]:
    """Per topic, the share of samples containing it whose normalised score is at least ``alpha``.

    ``dumps`` are attention records with ``present`` and ``g_star`` lists.
    ``sample_counts`` overrides the per-topic denominators; a topic with
    no samples gets ``None``.
    """
    if n_topics is None:
        if not dumps:
            raise ValueError("n_topics is required when there are no dumps")
        n_topics = len(dumps[0]["present"])
    chosen = np.zeros(n_topics, dtype=np.int64)
    present = np.zeros(n_topics, dtype=np.int64)
    for rec in dumps:
        for i, (p, g) in enumerate(zip(rec["present"], rec["g_star"])):
            if not p:
                continue
            present[i] += 1
            if g >= alpha:
                chosen[i] += 1
    denominators = present if sample_counts is None else np.asarray(sample_counts)
    return [None if d == 0 else float(c / d) for c, d in zip(chosen, denominators)]


def evaluate(model: TOATModel, samples: Sequence[InterviewSample], name: str = "test") -> tuple[EvalReport, list[dict]]:
    """Metrics on ``samples`` plus attention dumps and usage rates when topic attention is active."""
    predictions, probs, states = model.predict(samples)
    matrix = ConfusionMatrix.from_predictions(predictions, [s.label for s in samples])
    dumps = [st.to_record(s.participant_id) for st, s in zip(states, samples) if st is not None]
    for rec, p, y in zip(dumps, probs, predictions):
        rec["prob_positive"] = float(p)
        rec["prediction"] = int(y)
    rates = usage_rates(dumps, model.alpha, model.n_topics) if dumps else None
    report = EvalReport(name, matrix, compute_metrics(matrix).to_dict(), rates, config_fingerprint(model.config))
    return report, dumps


def format_alpha(alpha) -> str:
    if alpha == "off":
        return "-"
    if alpha == "auto":
        return "1/N"
    return f"{float(alpha):g}"


def render_table(reports: Sequence[EvalReport]) -> str:
    header = f"{'cell':<18} {'Accuracy':>9} {'Recall':>9} {'Precision':>9} {'F1':>9}"
    lines = [header, "-" * len(header)]
    for r in reports:
        pct = r.metrics["percent"]
        lines.append(
            f"{r.name:<18} {pct['accuracy']:>9.1f} {pct['recall']:>9.1f} {pct['precision']:>9.1f} {pct['f1']:>9.1f}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablation grid


def _run_cell(args) -> EvalReport:
    config, train_set, validation_set, test_set, name, features, feature_dims = args
    best, history = train(config, train_set, validation_set, features, feature_dims)
    model = best.build_model(features)
    report, _ = evaluate(model, test_set, name)
    report.extra = {
        "modality": config.modality,
        "alpha": format_alpha(config.alpha),
        "best_epoch": best.epoch,
        "has_audio_params": any(k.startswith("audio.") for k in best.params),
        "has_topic_weights": "ta.w" in best.params,
        "mean_text_feature_norm": _mean_text_norm(model, test_set),
    }
    return report


def _mean_text_norm(model: TOATModel, samples: Sequence[InterviewSample]) -> float | None:
    if model.attention is None:
        return None
    _, _, states = model.predict(samples)
    return float(np.mean([np.linalg.norm(s.h_tilde_t.data) for s in states]))


def ablation_configs(base: TrainingConfig, grid=PAPER_ABLATION_GRID) -> list[tuple[str, TrainingConfig]]:
    cells = []
    for modality, alpha in grid:
        if modality == "audio":
            alpha = "off"
        cells.append((f"{modality}/alpha={format_alpha(alpha)}", base.replace(modality=modality, alpha=alpha)))
    return cells


def run_ablation(
    train_set: Sequence[InterviewSample],
    validation_set: Sequence[InterviewSample],
    test_set: Sequence[InterviewSample],
    base_config: TrainingConfig,
    grid=PAPER_ABLATION_GRID,
    parallel: int = 1,
    features: Mapping[str, PrecomputedFeatures] | None = None,
    feature_dims: tuple[int, int] | None = None,
) -> list[EvalReport]:
    """Train and test one model per grid cell, all with the base seed.

    ``alpha='off'`` swaps topic attention for a uniform mean over present
    topics; audio-only cells never carry topic attention.
    """
    jobs = [
        (cfg, train_set, validation_set, test_set, name, features, feature_dims)
        for name, cfg in ablation_configs(base_config, grid)
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(job) for job in jobs]


# ---------------------------------------------------------------------------
# topic-wise subsets


def topic_subset(samples: Sequence[InterviewSample], index: int) -> list[InterviewSample]:
    """Samples containing topic ``index`` (1-based), reduced to that topic alone."""
    return [s.only_topic(index) for s in samples if s.topics[index - 1] is not None]


def run_topic_subsets(
    train_set: Sequence[InterviewSample],
    validation_set: Sequence[InterviewSample],
    test_set: Sequence[InterviewSample],
    base_config: TrainingConfig,
    features: Mapping[str, PrecomputedFeatures] | None = None,
    feature_dims: tuple[int, int] | None = None,
) -> list[dict]:
    """Train one single-topic model per topic, without topic attention, and report its test metrics."""
    n_topics = len(train_set[0].topics)
    config = base_config.replace(alpha="off")
    rows = []
    for index in range(1, n_topics + 1):
        parts = [topic_subset(split, index) for split in (train_set, validation_set, test_set)]
        row = {"topic": index, "n_samples": sum(len(p) for p in parts), "sizes": [len(p) for p in parts]}
        labels = {s.label for s in parts[0]}
        if any(not p for p in parts) or (config.oversample and len(labels) < 2):
            logger.warning("topic %d: subset empty or single-class, skipped", index)
            row["report"] = None
            rows.append(row)
            continue
        best, _ = train(config, parts[0], parts[1], features, feature_dims)
        model = best.build_model(features)
        report, _ = evaluate(model, parts[2], f"topic{index}")
        report.extra = {"has_topic_weights": "ta.w" in best.params}
        row["report"] = report
        rows.append(row)
    return rows


def topic_rows_to_csv(rows: Sequence[dict], rates: Sequence[float | None] | None, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("topic,n_samples,f1,usage_rate\n")
        for row in rows:
            rep = row["report"]
            f1 = "" if rep is None else repr(rep.f1)
            rate = "" if rates is None or rates[row["topic"] - 1] is None else repr(rates[row["topic"] - 1])
            fh.write(f"{row['topic']},{row['n_samples']},{f1},{rate}\n")


def plot_topic_analysis(rows: Sequence[dict], rates: Sequence[float | None] | None, path: str | Path) -> None:
    """Bar chart of per-topic F1 with usage rates overlaid."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    idx = [r["topic"] for r in rows]
    f1 = [np.nan if r["report"] is None else r["report"].f1 for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(idx, f1, color="tab:blue", alpha=0.7, label="single-topic F1")
    if rates is not None:
        ax.plot(idx, [np.nan if v is None else v for v in rates], "o-", color="tab:red", label="usage rate")
    ax.set_xticks(idx)
    ax.set_xticklabels([f"Q{i}" for i in idx])
    ax.set_ylim(0, 1.05)
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
